//! Text mask files.
//!
//! Format: a `GIBBS-MASK 1` header line, then per layer a `layer <name> <N>`
//! line followed by N whitespace-separated tokens from {-1, 1}. Files
//! round-trip exactly; a header with no layers is valid.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::PruneMask;

const HEADER: &str = "GIBBS-MASK 1";

pub fn export_mask(masks: &[(String, PruneMask)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for (name, mask) in masks {
        out.push_str(&format!("layer {} {}\n", name, mask.len()));
        let tokens: Vec<String> = mask.entries().iter().map(|e| e.to_string()).collect();
        out.push_str(&tokens.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn import_mask(path: impl AsRef<Path>) -> Result<Vec<(String, PruneMask)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some(HEADER) => {}
        Some(other) => {
            return Err(Error::MaskFormat(format!(
                "bad header '{other}', expected '{HEADER}'"
            )))
        }
        None => return Err(Error::MaskFormat("empty file".into())),
    }

    let mut tokens = lines.flat_map(str::split_whitespace);
    let mut masks = Vec::new();
    while let Some(tok) = tokens.next() {
        if tok != "layer" {
            return Err(Error::MaskFormat(format!("expected 'layer', got '{tok}'")));
        }
        let name = tokens
            .next()
            .ok_or_else(|| Error::MaskFormat("layer line missing a name".into()))?
            .to_string();
        let count: usize = tokens
            .next()
            .ok_or_else(|| Error::MaskFormat(format!("layer {name} missing a count")))?
            .parse()
            .map_err(|_| Error::MaskFormat(format!("layer {name} has a malformed count")))?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let tok = tokens.next().ok_or_else(|| {
                Error::MaskFormat(format!(
                    "layer {name}: expected {count} entries, file ended at {}",
                    entries.len()
                ))
            })?;
            match tok {
                "1" | "+1" => entries.push(1i8),
                "-1" => entries.push(-1i8),
                other => {
                    return Err(Error::MaskFormat(format!(
                        "layer {name}: token '{other}' outside {{-1,1}}"
                    )))
                }
            }
        }
        masks.push((name, PruneMask::new(entries)?));
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("gibbs-maskio-{}-{name}", std::process::id()))
    }

    #[test]
    fn round_trip() {
        let masks = vec![
            (
                "conv2".to_string(),
                PruneMask::new(vec![1, -1, -1, 1]).unwrap(),
            ),
            ("conv3".to_string(), PruneMask::all_pruned(3)),
        ];
        let path = tmp("roundtrip.txt");
        export_mask(&masks, &path).unwrap();
        let loaded = import_mask(&path).unwrap();
        assert_eq!(masks, loaded);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn header_only_is_valid() {
        let path = tmp("empty.txt");
        export_mask(&[], &path).unwrap();
        assert_eq!(import_mask(&path).unwrap(), vec![]);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn corrupt_token_and_count_and_version_errors() {
        let path = tmp("bad.txt");

        std::fs::write(&path, "GIBBS-MASK 1\nlayer a 2\n1 2\n").unwrap();
        match import_mask(&path) {
            Err(Error::MaskFormat(msg)) => assert!(msg.contains("outside")),
            other => panic!("expected token error, got {other:?}"),
        }

        std::fs::write(&path, "GIBBS-MASK 1\nlayer a 3\n1 -1\n").unwrap();
        assert!(import_mask(&path).is_err());

        std::fs::write(&path, "GIBBS-MASK 2\n").unwrap();
        match import_mask(&path) {
            Err(Error::MaskFormat(msg)) => assert!(msg.contains("header")),
            other => panic!("expected header error, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }
}
