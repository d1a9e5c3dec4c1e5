//! Preference database and checkpoint files.
//!
//! `preferences.db` holds one JSON [`PreferenceRecord`] per line. A checkpoint is a
//! one-line JSON header followed by the parameters as little-endian `f64`s.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envlib::EnvKind;
use crate::error::{Error, Result};
use crate::numerics::{LayerShape, Mlp};
use crate::oracle::PreferenceRecord;
use crate::orchestrator::snapshot::checksum;
use crate::policy::PolicyParams;
use crate::reward_model::{RewardPredictor, RunningNorm};

pub fn record_line(record: &PreferenceRecord) -> String {
    serde_json::to_string(record).expect("preference records always serialise")
}

pub fn parse_db(text: &str) -> Result<Vec<PreferenceRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PreferenceRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(i + 1, format!("bad preference record: {e}")))?;
        if rec.left.recomputed_return() != rec.left.true_return() || rec.right.recomputed_return() != rec.right.true_return() {
            return Err(Error::parse(i + 1, "segment return does not match its transitions"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_db(path: &Path) -> Result<Vec<PreferenceRecord>> {
    parse_db(&fs::read_to_string(path)?)
}

pub fn save_db(path: &Path, records: &[PreferenceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(w, "{}", record_line(r))?;
    }
    w.flush()?;
    Ok(())
}

pub const CHECKPOINT_FORMAT: &str = "prefscale-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Policy,
    RewardModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    /// Present for network sections; absent for plain vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerShape>>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub kind: CheckpointKind,
    pub env: EnvKind,
    pub sections: Vec<Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<RunningNorm>,
    pub checksum: u64,
}

fn write_checkpoint(path: &Path, header: &CheckpointHeader, payload: &[f64]) -> Result<()> {
    let mut bytes = serde_json::to_vec(header).expect("header serialises");
    bytes.push(b'\n');
    bytes.reserve(payload.len() * 8);
    for p in payload {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut first = Vec::new();
    r.read_until(b'\n', &mut first)?;
    if first.last() != Some(&b'\n') {
        return Err(Error::parse(1, "checkpoint header is not newline-terminated"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&first[..first.len() - 1]).map_err(|e| Error::parse(1, format!("bad checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::parse(1, format!("unsupported checkpoint {} v{}", header.format, header.version)));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let expected: usize = header.sections.iter().map(|s| s.len).sum();
    if rest.len() != expected * 8 {
        return Err(Error::parse(
            2,
            format!("payload holds {} bytes, header promises {} values", rest.len(), expected),
        ));
    }
    let payload: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if checksum(&payload) != header.checksum {
        return Err(Error::parse(2, "payload checksum mismatch"));
    }
    Ok((header, payload))
}

fn net_section(name: &str, net: &Mlp) -> Section {
    Section {
        name: name.to_string(),
        layers: Some(net.layers().to_vec()),
        len: net.num_params(),
    }
}

fn take_net(sections: &[Section], payload: &[f64], offset: &mut usize, name: &str) -> Result<Mlp> {
    let s = sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::parse(1, format!("missing section '{name}'")))?;
    let layers = s.layers.clone().ok_or_else(|| Error::parse(1, format!("section '{name}' has no layers")))?;
    let net = Mlp::from_parts(layers, payload[*offset..*offset + s.len].to_vec()).map_err(|e| Error::parse(1, e.to_string()))?;
    *offset += s.len;
    Ok(net)
}

pub fn save_policy(path: &Path, env: EnvKind, params: &PolicyParams) -> Result<()> {
    let payload = params.flatten();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        kind: CheckpointKind::Policy,
        env,
        sections: vec![
            net_section("actor", &params.actor),
            Section {
                name: "log_std".into(),
                layers: None,
                len: params.log_std.len(),
            },
            net_section("critic", &params.critic),
        ],
        norm: None,
        checksum: checksum(&payload),
    };
    write_checkpoint(path, &header, &payload)
}

pub fn load_policy(path: &Path) -> Result<(EnvKind, PolicyParams)> {
    let (h, payload) = read_checkpoint(path)?;
    if h.kind != CheckpointKind::Policy {
        return Err(Error::parse(1, "not a policy checkpoint"));
    }
    let names: Vec<&str> = h.sections.iter().map(|s| s.name.as_str()).collect();
    if names != ["actor", "log_std", "critic"] {
        return Err(Error::parse(1, format!("unexpected policy sections {names:?}")));
    }
    let mut off = 0;
    let actor = take_net(&h.sections, &payload, &mut off, "actor")?;
    let n_std = h.sections[1].len;
    let log_std = payload[off..off + n_std].to_vec();
    off += n_std;
    let critic = take_net(&h.sections, &payload, &mut off, "critic")?;
    Ok((h.env, PolicyParams { actor, log_std, critic }))
}

pub fn save_reward_model(path: &Path, env: EnvKind, model: &RewardPredictor) -> Result<()> {
    let payload = model.net.params().to_vec();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        kind: CheckpointKind::RewardModel,
        env,
        sections: vec![net_section("reward", &model.net)],
        norm: Some(model.output_norm),
        checksum: checksum(&payload),
    };
    write_checkpoint(path, &header, &payload)
}

/// Loads the network and normalisation statistics; the optimiser state starts fresh.
pub fn load_reward_model(path: &Path, step_size: f64) -> Result<(EnvKind, RewardPredictor)> {
    let (h, payload) = read_checkpoint(path)?;
    if h.kind != CheckpointKind::RewardModel {
        return Err(Error::parse(1, "not a reward-model checkpoint"));
    }
    let mut off = 0;
    let net = take_net(&h.sections, &payload, &mut off, "reward")?;
    let spec = crate::envlib::EnvSpec::new(h.env);
    if net.input_dim() != spec.obs_dim + spec.act_dim {
        return Err(Error::Dimension {
            expected: spec.obs_dim + spec.act_dim,
            got: net.input_dim(),
        });
    }
    let mut model = RewardPredictor::from_net(net, spec.obs_dim, spec.act_dim, step_size);
    model.output_norm = h.norm.unwrap_or_default();
    Ok((h.env, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngStream, StreamId};

    #[test]
    fn policy_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = PolicyParams::new(3, 1, &mut RngStream::new(1, StreamId::Init));
        let path = dir.path().join("p.ckpt");
        save_policy(&path, EnvKind::VelocityRunner, &p).unwrap();
        let (env, back) = load_policy(&path).unwrap();
        assert_eq!(env, EnvKind::VelocityRunner);
        assert_eq!(back, p);
    }

    #[test]
    fn truncated_checkpoint_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = PolicyParams::new(3, 1, &mut RngStream::new(1, StreamId::Init));
        let path = dir.path().join("p.ckpt");
        save_policy(&path, EnvKind::VelocityRunner, &p).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_policy(&path), Err(Error::Parse { line: 2, .. })));
        fs::write(&path, b"{not json").unwrap();
        assert!(matches!(load_policy(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn reward_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RewardPredictor::new(4, 2, 1e-4, &mut RngStream::new(2, StreamId::Init));
        m.normalize_raw(1.0);
        m.normalize_raw(3.0);
        let path = dir.path().join("r.ckpt");
        save_reward_model(&path, EnvKind::GoalReacher, &m).unwrap();
        let (_, back) = load_reward_model(&path, 1e-4).unwrap();
        assert_eq!(back.net, m.net);
        assert_eq!(back.output_norm, m.output_norm);
    }
}
