use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const LABEL_HEADER: [&str; 3] = ["FileName", "EF", "Split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TRAIN" => Ok(Split::Train),
            "VAL" => Ok(Split::Val),
            "TEST" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split token `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub file_name: String,
    /// Ejection fraction in percent.
    pub ef: f64,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    pub rows: Vec<LabelRow>,
}

impl LabelTable {
    pub fn new(rows: Vec<LabelRow>) -> Result<Self> {
        let table = Self { rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let bad_ef: Vec<String> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| !(r.ef > 0.0 && r.ef < 100.0))
            .map(|(i, _)| (i + 1).to_string())
            .collect();
        if !bad_ef.is_empty() {
            return Err(Error::Validation(format!(
                "EF outside (0, 100) on row(s) {}",
                bad_ef.join(", ")
            )));
        }
        let mut seen = HashSet::new();
        let dups: Vec<&str> = self
            .rows
            .iter()
            .filter(|r| !seen.insert(r.file_name.as_str()))
            .map(|r| r.file_name.as_str())
            .collect();
        if !dups.is_empty() {
            return Err(Error::Validation(format!(
                "duplicate file name(s): {}",
                dups.join(", ")
            )));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabelRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, file_name: &str) -> Option<&LabelRow> {
        self.rows.iter().find(|r| r.file_name == file_name)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != LABEL_HEADER {
            return Err(Error::Validation(format!(
                "label header must be `FileName,EF,Split`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let ef: f64 = rec[1].trim().parse().map_err(|_| {
                Error::Validation(format!("row {row}: EF `{}` is not a number", &rec[1]))
            })?;
            let split = rec[2]
                .trim()
                .parse()
                .map_err(|e| Error::Validation(format!("row {row}: {e}")))?;
            rows.push(LabelRow {
                file_name: rec[0].trim().to_string(),
                ef,
                split,
            });
        }
        Self::new(rows)
    }

    pub fn to_writer(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LABEL_HEADER)?;
        for r in &self.rows {
            w.write_record([r.file_name.clone(), r.ef.to_string(), r.split.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<labels>", e))?;
        Ok(())
    }
}

pub fn load_label_table(path: impl AsRef<Path>) -> Result<LabelTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    LabelTable::from_reader(file)
}

pub fn write_label_table(table: &LabelTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    table.to_writer(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LabelTable> {
        LabelTable::from_reader(s.as_bytes())
    }

    #[test]
    fn echonet_style_row() {
        let t = parse("FileName,EF,Split\n0X1A.avi,55.9,TRAIN\n").unwrap();
        assert_eq!(
            t.rows,
            vec![LabelRow {
                file_name: "0X1A.avi".into(),
                ef: 55.9,
                split: Split::Train
            }]
        );
    }

    #[test]
    fn round_trip() {
        let t = LabelTable::new(vec![
            LabelRow {
                file_name: "a.eaiv".into(),
                ef: 36.000000000000014,
                split: Split::Train,
            },
            LabelRow {
                file_name: "b.eaiv".into(),
                ef: 61.5,
                split: Split::Val,
            },
            LabelRow {
                file_name: "c.eaiv".into(),
                ef: 12.25,
                split: Split::Test,
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        t.to_writer(&mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), t);
    }

    #[test]
    fn validation_errors() {
        let err = parse("FileName,EF,Split\na,50,TRAIN\nb,120,VAL\nc,-1,TEST\n").unwrap_err();
        assert!(err.to_string().contains("row(s) 2, 3"), "{err}");
        assert!(parse("FileName,EF,Split\na,50,TRAIN\na,40,VAL\n").is_err());
        assert!(parse("FileName,EF,Split\na,50,DEV\n")
            .unwrap_err()
            .to_string()
            .contains("DEV"));
        assert!(parse("Name,EF,Split\na,50,TRAIN\n").is_err());
    }
}
