//! Multiple-choice QA instances and their JSONL serialization.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One four-way multiple-choice instance. `context` holds the statement the
/// answer must be copied from, when the task provides one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaInstance {
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl McqaInstance {
    pub fn correct_answer(&self) -> &str {
        &self.choices[self.answer_index]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.choices.len() != 4 {
            return Err(format!("expected 4 choices, got {}", self.choices.len()));
        }
        if self.answer_index >= 4 {
            return Err(format!("answer_index {} out of range", self.answer_index));
        }
        Ok(())
    }
}

/// Loads one instance per line, reporting the line number of the first
/// malformed record.
pub fn load_mcqa_jsonl(path: &Path) -> Result<Vec<McqaInstance>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: McqaInstance = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        inst.validate().map_err(|message| Error::Record { line: lineno + 1, message })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn save_mcqa_jsonl(path: &Path, instances: &[McqaInstance]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for inst in instances {
        serde_json::to_writer(&mut file, inst)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
