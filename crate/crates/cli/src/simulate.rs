//! `psem simulate`: operating characteristics over a grid of generator cells.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use psem::{run_study, Result, StudyResult};

use crate::config::StudyFile;
use crate::output::{create_dir, write_json};

pub const STUDY_CSV: &str = "study.csv";
pub const STUDY_JSON: &str = "study.json";

pub fn execute(file: &StudyFile, out: &Path) -> Result<StudyResult> {
    let study = file.study();
    study.validate()?;
    let result = run_study(&study)?;
    create_dir(out)?;
    result.write_csv(BufWriter::new(File::create(out.join(STUDY_CSV))?))?;
    write_json(&out.join(STUDY_JSON), &result)?;
    Ok(result)
}
