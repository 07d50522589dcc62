//! Entity-type inventory, IOB tag sets and legal-transition masks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tagging scheme used when reading or writing tag sequences.
///
/// Everything inside the crate is canonical IOB2; IOB1 only appears at the
/// import/export boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Iob1,
    Iob2,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "IOB1" => Ok(Scheme::Iob1),
            "IOB2" | "BIO" => Ok(Scheme::Iob2),
            other => Err(Error::InvalidArgument(format!("unknown tagging scheme `{other}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Iob1 => "IOB1",
            Scheme::Iob2 => "IOB2",
        })
    }
}

/// A parsed IOB tag, independent of any schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Tag<'a> {
    pub fn parse(tag: &'a str) -> Option<Tag<'a>> {
        if tag == "O" {
            return Some(Tag::Outside);
        }
        let (prefix, ty) = tag.split_once('-')?;
        if ty.is_empty() {
            return None;
        }
        match prefix {
            "B" => Some(Tag::Begin(ty)),
            "I" => Some(Tag::Inside(ty)),
            _ => None,
        }
    }

    pub fn entity_type(&self) -> Option<&'a str> {
        match *self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

/// Clinical entity types from the case-report inventory.
pub const CLINICAL_TYPES: &[&str] = &[
    "Admission",
    "Oncology",
    "Blood_Pressure",
    "Respiration",
    "Dosage",
    "Vital_Signs",
    "Symptom",
    "Kidney_Disease",
    "Temperature",
    "Diabetes",
    "Vaccine",
    "Time_Of_Symptom",
    "Obesity",
    "Pregnancy",
    "BMI",
    "Height",
    "Heart_Disease",
    "Pulse",
    "Hypertension",
    "Drug_Name",
    "Drug_Ingredient",
    "Hyperlipidemia",
    "Cerebrovascular_Disease",
    "Disease_Syndrome_Disorder",
    "Treatment",
    "Clinical_Dept",
    "Weight",
    "Admission_Discharge",
    "Modifier",
    "External_Body_Part",
    "Test",
    "Strength",
    "Route",
    "Test_Result",
    "Drug",
];

/// Non-clinical (social determinants and personal) entity types.
pub const NON_CLINICAL_TYPES: &[&str] = &[
    "Name",
    "Location",
    "Date",
    "Relative_Date",
    "Duration",
    "Relationship_Status",
    "Social_Status",
    "Family_History",
    "Employment_Status",
    "Race_Ethnicity",
    "Gender",
    "Sexual_Orientation",
    "Diet",
    "Alcohol",
    "Smoking",
    "Age",
];

/// Ordered entity-type inventory with the derived IOB tag list.
///
/// Tag indices are `O = 0`, `B-type_k = 1 + 2k`, `I-type_k = 2 + 2k`. The
/// transition mask has two extra virtual states: START at index
/// `num_tags()` and STOP at `num_tags() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    entity_types: Vec<String>,
    scheme: Scheme,
    tags: Vec<String>,
}

impl LabelSchema {
    pub fn new<S: AsRef<str>>(entity_types: &[S], scheme: Scheme) -> Result<Self> {
        let mut types: Vec<String> = Vec::with_capacity(entity_types.len());
        for t in entity_types {
            let t = t.as_ref().trim();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Schema(format!(
                    "entity type `{t}` must be non-empty and contain no whitespace"
                )));
            }
            if types.iter().any(|x| x == t) {
                return Err(Error::Schema(format!("duplicate entity type `{t}`")));
            }
            types.push(t.to_string());
        }
        let mut tags = Vec::with_capacity(2 * types.len() + 1);
        tags.push("O".to_string());
        for t in &types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        Ok(LabelSchema {
            entity_types: types,
            scheme,
            tags,
        })
    }

    /// The full clinical plus non-clinical inventory.
    pub fn case_reports() -> Self {
        let all: Vec<&str> = CLINICAL_TYPES
            .iter()
            .chain(NON_CLINICAL_TYPES)
            .copied()
            .collect();
        Self::new(&all, Scheme::Iob2).expect("built-in inventory is valid")
    }

    /// Parses a schema file: one entity type per line plus a
    /// `scheme = IOB1|IOB2` declaration. Blank lines and `#` comments are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut scheme = None;
        let mut types = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("scheme") {
                let rest = rest.trim_start();
                if let Some(value) = rest.strip_prefix('=').or_else(|| rest.strip_prefix(':')) {
                    if scheme.is_some() {
                        return Err(Error::parse(lineno + 1, "duplicate scheme declaration"));
                    }
                    scheme = Some(
                        value
                            .parse::<Scheme>()
                            .map_err(|e| Error::parse(lineno + 1, e.to_string()))?,
                    );
                    continue;
                }
            }
            types.push(line.to_string());
        }
        let scheme = scheme.ok_or_else(|| Error::Schema("missing scheme declaration".into()))?;
        Self::new(&types, scheme)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("scheme = {}\n", self.scheme);
        for t in &self.entity_types {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// Same inventory with a different declared scheme.
    pub fn with_scheme(&self, scheme: Scheme) -> Self {
        LabelSchema {
            scheme,
            ..self.clone()
        }
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn start(&self) -> usize {
        self.tags.len()
    }

    pub fn stop(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn type_index(&self, entity_type: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == entity_type)
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        match Tag::parse(tag)? {
            Tag::Outside => Some(0),
            Tag::Begin(t) => self.type_index(t).map(|k| 1 + 2 * k),
            Tag::Inside(t) => self.type_index(t).map(|k| 2 + 2 * k),
        }
    }

    pub fn tag_name(&self, index: usize) -> &str {
        &self.tags[index]
    }

    pub fn contains_tag(&self, tag: &str) -> bool {
        self.tag_index(tag).is_some()
    }

    /// Legal-transition mask for the schema's declared scheme.
    pub fn transition_mask(&self) -> TransitionMask {
        self.transition_mask_for(self.scheme)
    }

    /// Legal-transition mask over `(num_tags + 2)²` including START/STOP.
    pub fn transition_mask_for(&self, scheme: Scheme) -> TransitionMask {
        let n = self.num_tags();
        let size = n + 2;
        let (start, stop) = (n, n + 1);
        let mut allowed = vec![false; size * size];
        let kind = |i: usize| -> (u8, usize) {
            // (0 = O, 1 = B, 2 = I), type index
            if i == 0 {
                (0, usize::MAX)
            } else {
                (if (i - 1) % 2 == 0 { 1 } else { 2 }, (i - 1) / 2)
            }
        };
        for from in 0..size {
            for to in 0..size {
                let ok = if from == stop || to == start {
                    false
                } else if to == stop {
                    true
                } else {
                    let (tk, tt) = kind(to);
                    let prev = if from == start { None } else { Some(kind(from)) };
                    match (scheme, tk) {
                        (_, 0) => true,
                        (Scheme::Iob2, 1) => true,
                        (Scheme::Iob2, _) => {
                            matches!(prev, Some((pk, pt)) if pk != 0 && pt == tt)
                        }
                        (Scheme::Iob1, 2) => true,
                        (Scheme::Iob1, _) => {
                            matches!(prev, Some((pk, pt)) if pk != 0 && pt == tt)
                        }
                    }
                };
                allowed[from * size + to] = ok;
            }
        }
        TransitionMask { size, allowed }
    }
}

/// Boolean matrix of allowed tag bigrams over tags plus START/STOP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMask {
    size: usize,
    allowed: Vec<bool>,
}

impl TransitionMask {
    /// A mask that allows every transition except into START or out of STOP.
    pub fn permissive(num_tags: usize) -> Self {
        let size = num_tags + 2;
        let mut allowed = vec![true; size * size];
        for i in 0..size {
            allowed[i * size + num_tags] = false;
            allowed[(num_tags + 1) * size + i] = false;
        }
        TransitionMask { size, allowed }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_tags(&self) -> usize {
        self.size - 2
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.allowed[from * self.size + to]
    }

    /// Whether an index sequence is accepted, including START and STOP.
    pub fn accepts(&self, path: &[usize]) -> bool {
        let n = self.num_tags();
        let mut prev = n;
        for &t in path {
            if !self.allowed(prev, t) {
                return false;
            }
            prev = t;
        }
        self.allowed(prev, n + 1)
    }
}
