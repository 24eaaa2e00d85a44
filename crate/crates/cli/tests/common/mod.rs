use icp_core::canonical;
use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    /// Parses stdout, which must be one canonical JSON document.
    pub fn json(&self) -> Value {
        let line = self.stdout.trim_end_matches('\n');
        assert!(canonical::is_canonical(line), "not canonical: {line}\nstderr: {}", self.stderr);
        serde_json::from_str(line).unwrap()
    }
}

pub fn icpctl(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("icpctl").chain(args.iter().copied());
    let code = icp_cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}
