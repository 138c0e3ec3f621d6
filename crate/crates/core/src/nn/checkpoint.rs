//! Portable text checkpoints.
//!
//! ```text
//! MODELv1
//! in=2 hidden=16,16 out=2 act=tanh outact=identity
//! <one parameter per line, shortest round-trip decimal>
//! END
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{Architecture, Mlp};
use crate::error::{Error, Result};

const MAGIC: &str = "MODELv1";
const TRAILER: &str = "END";

pub fn render_checkpoint(net: &Mlp) -> String {
    let mut out = String::with_capacity(24 * net.params().len() + 64);
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&net.arch().descriptor());
    out.push('\n');
    for p in net.params() {
        // `Display` for f64 is the shortest representation that round-trips.
        writeln!(out, "{p}").expect("writing to a String cannot fail");
    }
    out.push_str(TRAILER);
    out.push('\n');
    out
}

pub fn parse_checkpoint(text: &str) -> Result<Mlp> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    match lines.next() {
        Some((_, MAGIC)) => {}
        Some((n, other)) => return Err(parse_err(n, format!("expected header {MAGIC:?}, found {other:?}"))),
        None => return Err(parse_err(1, "empty checkpoint".into())),
    }
    let arch = match lines.next() {
        Some((n, line)) => Architecture::parse_descriptor(line)
            .ok_or_else(|| parse_err(n, format!("malformed architecture descriptor {line:?}")))?,
        None => return Err(parse_err(2, "missing architecture descriptor".into())),
    };
    let expected = arch.param_count();
    let mut params = Vec::with_capacity(expected);
    let mut saw_trailer = false;
    let mut last_line = 2;
    for (n, line) in lines.by_ref() {
        last_line = n;
        if line == TRAILER {
            saw_trailer = true;
            break;
        }
        let p: f64 = line
            .trim()
            .parse()
            .map_err(|_| parse_err(n, format!("not a number: {line:?}")))?;
        if !p.is_finite() {
            return Err(parse_err(n, format!("non-finite parameter {line:?}")));
        }
        params.push(p);
    }
    if params.len() != expected {
        return Err(parse_err(
            last_line,
            format!("expected {expected} parameters, found {}", params.len()),
        ));
    }
    if !saw_trailer {
        return Err(parse_err(last_line, format!("missing {TRAILER:?} trailer")));
    }
    if let Some((n, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(n, format!("unexpected content after trailer: {extra:?}")));
    }
    Mlp::from_params(arch, params)
}

pub fn checkpoint_save(net: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, render_checkpoint(net))?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<Mlp> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

impl Mlp {
    /// Load a checkpoint into an existing slot, which fixes the architecture.
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let loaded = checkpoint_load(path)?;
        if loaded.arch() != self.arch() {
            return Err(Error::contract(format!(
                "checkpoint architecture {} does not match slot {}",
                loaded.arch(),
                self.arch()
            )));
        }
        *self = loaded;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::init(Architecture::generator(2, 3, 7), &mut rng).unwrap()
    }

    #[test]
    fn save_load_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h1.model");
        let net = sample_net(11);
        checkpoint_save(&net, &path).unwrap();
        let back = checkpoint_load(&path).unwrap();
        assert_eq!(back, net);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = render_checkpoint(&sample_net(1)).replacen(MAGIC, "MODELv2", 1);
        assert!(matches!(parse_checkpoint(&text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn truncated_params_name_the_counts() {
        let text = render_checkpoint(&sample_net(2));
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(5);
        let err = parse_checkpoint(&lines.join("\n")).unwrap_err();
        let msg = err.to_string();
        let expected = Architecture::generator(2, 3, 7).param_count();
        assert!(msg.contains(&format!("expected {expected} parameters, found {}", expected - 1)), "{msg}");
    }

    #[test]
    fn garbage_line_reports_line_number() {
        let text = render_checkpoint(&sample_net(3));
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[4] = "zzz".into();
        let err = parse_checkpoint(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }));
    }

    #[test]
    fn load_into_checks_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.model");
        checkpoint_save(&sample_net(4), &path).unwrap();
        let mut slot = Mlp::zeros(Architecture::generator(2, 2, 7)).unwrap();
        assert!(matches!(slot.load_into(&path), Err(Error::Contract(_))));
        let mut ok = Mlp::zeros(Architecture::generator(2, 3, 7)).unwrap();
        ok.load_into(&path).unwrap();
        assert_eq!(ok, sample_net(4));
    }
}
