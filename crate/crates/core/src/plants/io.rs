//! Plain-text field dumps: header `ni nj m names...`, then one line per
//! interior cell (i outer, j inner) holding its `m` values.

use std::io::{BufRead, Write};

use crate::error::{check_len, Error, Result};
use crate::util::fmt17;

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub ni: usize,
    pub nj: usize,
    pub names: Vec<String>,
    /// Index `(i*nj + j)*m + v`.
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(ni: usize, nj: usize, names: &[&str], values: Vec<f64>) -> Result<Self> {
        check_len(ni * nj * names.len(), values.len())?;
        Ok(Field {
            ni,
            nj,
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
        })
    }

    pub fn m(&self) -> usize {
        self.names.len()
    }

    /// Values of one named variable, one per cell.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let m = self.m();
        let v = self.names.iter().position(|n| n == name)?;
        Some(self.values.chunks(m).map(|c| c[v]).collect())
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{} {} {} {}", self.ni, self.nj, self.m(), self.names.join(" "))?;
        for row in self.values.chunks(self.m().max(1)) {
            let line: Vec<String> = row.iter().map(|x| fmt17(*x)).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty field file".into()))??;
        let tok: Vec<&str> = header.split_whitespace().collect();
        let bad = || Error::Parse(format!("bad field header `{header}`"));
        if tok.len() < 3 {
            return Err(bad());
        }
        let ni: usize = tok[0].parse().map_err(|_| bad())?;
        let nj: usize = tok[1].parse().map_err(|_| bad())?;
        let m: usize = tok[2].parse().map_err(|_| bad())?;
        if tok.len() != 3 + m {
            return Err(bad());
        }
        let names = tok[3..].iter().map(|s| s.to_string()).collect();
        let mut values = Vec::with_capacity(ni * nj * m);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad field line `{line}`"))))
                .collect::<Result<_>>()?;
            if row.len() != m {
                return Err(Error::Parse(format!("expected {m} values in `{line}`")));
            }
            values.extend(row);
        }
        check_len(ni * nj * m, values.len())?;
        Ok(Field { ni, nj, names, values })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
