use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::ClickEvent;
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn write_click_log(path: &Path, events: &[ClickEvent]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_click_log(path: &Path) -> Result<Vec<ClickEvent>> {
    let file = std::fs::File::open(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut events = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: k + 1,
            reason: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::ClickKind;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clicks.jsonl");
        let events = vec![
            ClickEvent { kind: ClickKind::RightDivide, target: 3, pre_label: true, timestamp: 0 },
            ClickEvent { kind: ClickKind::LeftFlip, target: 17, pre_label: true, timestamp: 1 },
        ];
        write_click_log(&path, &events).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"kind":"rightDivide","target":3,"preLabel":true,"timestamp":0}"#
        );
        assert_eq!(read_click_log(&path).unwrap(), events);
        std::fs::write(&path, "{\"kind\":\"leftFlip\"}\n").unwrap();
        assert!(matches!(read_click_log(&path), Err(Error::MalformedLine { line: 1, .. })));
    }
}
