//! On-disk model checkpoints.
//!
//! Layout: the 8-byte magic `BFNCKPT1`, a little-endian `u64` manifest length,
//! the manifest as JSON, a little-endian `u64` parameter count, then the
//! parameters as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bfn::{CategoricalReadout, DataSchema};
use crate::data::TabularCodec;
use crate::error::{BfnError, Result};
use crate::model::{Mlp, NetworkSpec, ParameterVector};
use crate::schedule::ScheduleSet;

pub const MAGIC: &[u8; 8] = b"BFNCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub network: NetworkSpec,
    pub schedules: ScheduleSet,
    pub schema: DataSchema,
    pub task_index: usize,
    #[serde(default)]
    pub codec: Option<TabularCodec>,
    #[serde(default)]
    pub readout: CategoricalReadout,
    pub sample_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub net: Mlp,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let params = self.net.params.to_le_bytes();
        let mut out = Vec::with_capacity(24 + manifest.len() + params.len());
        out.extend_from_slice(MAGIC);
        out.extend((manifest.len() as u64).to_le_bytes());
        out.extend(&manifest);
        out.extend((self.net.params.len() as u64).to_le_bytes());
        out.extend(params);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || BfnError::Format("checkpoint is truncated".into());
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(BfnError::Format("not a checkpoint (bad magic)".into()));
        }
        let read_u64 = |at: usize| -> Result<u64> {
            let b = bytes.get(at..at + 8).ok_or_else(truncated)?;
            Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
        };
        let mlen = read_u64(8)? as usize;
        let mend = 16usize.checked_add(mlen).ok_or_else(truncated)?;
        let manifest: CheckpointManifest =
            serde_json::from_slice(bytes.get(16..mend).ok_or_else(truncated)?).map_err(|e| {
                BfnError::Format(format!("checkpoint manifest: {e}"))
            })?;
        let count = read_u64(mend)? as usize;
        let pstart = mend + 8;
        if bytes.len() - pstart.min(bytes.len()) != count * 8 {
            return Err(BfnError::Format(format!(
                "checkpoint declares {count} parameters but holds {} bytes",
                bytes.len().saturating_sub(pstart)
            )));
        }
        manifest.network.validate()?;
        let params = ParameterVector::from_le_bytes(&bytes[pstart..], manifest.network.layout())
            .map_err(|e| BfnError::Format(format!("checkpoint parameters: {e}")))?;
        let net = Mlp::new(manifest.network.clone(), params)?;
        Ok(Self { manifest, net })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| BfnError::Argument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, HeadBlock, TimeEmbedding};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint() -> Checkpoint {
        let schema = DataSchema::new(vec![
            crate::bfn::VariableKind::Continuous,
            crate::bfn::VariableKind::Categorical { classes: 3 },
        ])
        .unwrap();
        let spec = NetworkSpec {
            input_width: schema.feature_width(),
            hidden_widths: vec![5],
            output_width: 4,
            activation: Activation::Silu,
            time_embedding: TimeEmbedding::Sinusoidal { frequencies: 2 },
            heads: schema.heads(),
        };
        assert_eq!(spec.heads, vec![HeadBlock::Continuous, HeadBlock::Categorical(3)]);
        let net = Mlp::init(spec.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        Checkpoint {
            manifest: CheckpointManifest {
                network: spec,
                schedules: ScheduleSet::default(),
                schema,
                task_index: 1,
                codec: None,
                readout: CategoricalReadout::Argmax,
                sample_steps: 100,
            },
            net,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = checkpoint();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"BFNCKPT1");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn corruption_is_a_format_error() {
        let bytes = checkpoint().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(BfnError::Format(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(BfnError::Format(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..12]), Err(BfnError::Format(_))));
    }
}
