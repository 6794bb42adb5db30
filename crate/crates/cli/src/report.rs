use std::io::{self, Write};

/// One checked invariant with its measured value and acceptance band.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: String,
    pub band: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: impl Into<String>, band: impl Into<String>, pass: bool) -> Self {
        Check {
            name: name.into(),
            measured: measured.into(),
            band: band.into(),
            pass,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub experiment: String,
    pub comments: Vec<String>,
    /// Regime notes and overridden guards.
    pub flags: Vec<String>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        for c in &self.comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "experiment: {}", self.experiment)?;
        for f in &self.flags {
            writeln!(w, "flag: {f}")?;
        }
        writeln!(w, "check | measured | band | result")?;
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            writeln!(w, "{} | {} | {} | {verdict}", c.name, c.measured, c.band)?;
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        writeln!(
            w,
            "overall: {} ({passed} of {} checks passed)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.checks.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_layout() {
        let report = Report {
            experiment: "conservation".into(),
            comments: vec!["experiment = conservation".into()],
            flags: vec![],
            checks: vec![
                Check::new("a", "1e-12", "< 1e-9", true),
                Check::new("b", "2", "< 1", false),
            ],
        };
        let mut out = Vec::new();
        report.write(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("# experiment = conservation\n"));
        assert!(text.contains("a | 1e-12 | < 1e-9 | PASS\n"));
        assert!(text.contains("b | 2 | < 1 | FAIL\n"));
        assert!(text.ends_with("overall: FAIL (1 of 2 checks passed)\n"));
        assert_eq!(report.exit_code(), 1);
    }
}
