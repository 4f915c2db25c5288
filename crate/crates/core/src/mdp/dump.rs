use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{MdpError, StepRecord, Trajectory};

/// First line of a trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub vocab_hash: String,
    pub seed: u64,
    pub gamma_a: f64,
}

/// Writes a header line and then one JSON step record per line.
pub fn write_trajectory_jsonl<W: Write>(
    mut w: W,
    header: &DumpHeader,
    traj: &Trajectory,
) -> Result<(), MdpError> {
    let line = serde_json::to_string(header).map_err(|e| MdpError::Dump(e.to_string()))?;
    writeln!(w, "{line}")?;
    for s in traj.steps() {
        let line = serde_json::to_string(s).map_err(|e| MdpError::Dump(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_jsonl<R: BufRead>(r: R) -> Result<(DumpHeader, Trajectory), MdpError> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| MdpError::Dump("missing header line".into()))??;
    let header: DumpHeader =
        serde_json::from_str(&first).map_err(|e| MdpError::Dump(format!("header: {e}")))?;
    let mut steps = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: StepRecord = serde_json::from_str(&line)
            .map_err(|e| MdpError::Dump(format!("line {}: {e}", i + 2)))?;
        steps.push(s);
    }
    let traj = Trajectory::new(steps, header.gamma_a)?;
    Ok((header, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::types::tests::step;

    #[test]
    fn round_trip() {
        let t = Trajectory::new(vec![step(&[1, 2], 0.5, false), step(&[3], 1.0, true)], 0.95)
            .unwrap();
        let h = DumpHeader {
            vocab_hash: "abc".into(),
            seed: 7,
            gamma_a: 0.95,
        };
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &h, &t).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 3);
        let (h2, t2) = read_trajectory_jsonl(&buf[..]).unwrap();
        assert_eq!(h, h2);
        assert_eq!(t, t2);
    }
}
