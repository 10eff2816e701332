use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Generator, GeneratorConfig};
use super::schedule::ScheduleConfig;
use crate::error::{Error, Result};
use crate::nn::{export_params, import_params, NamedParam};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk generator: JSON holding the format version, schedule, network
/// sizes, frozen-encoder seed and every trainable parameter by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u32,
    schedule: ScheduleConfig,
    generator: GeneratorConfig,
    frozen_encoder_seed: u64,
    params: Vec<NamedParam>,
}

pub fn checkpoint_to_string<S: Scalar>(generator: &Generator<S>, schedule: &ScheduleConfig) -> String {
    let params = export_params(generator);
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        schedule: *schedule,
        generator: *generator.config(),
        frozen_encoder_seed: generator.config().semantic_seed,
        params,
    };
    serde_json::to_string(&file).expect("checkpoint serializes")
}

pub fn checkpoint_from_str<S: Scalar>(text: &str) -> Result<(Generator<S>, ScheduleConfig)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::FormatVersion {
            found: version.min(u32::MAX as u64) as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile =
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.frozen_encoder_seed != file.generator.semantic_seed {
        return Err(Error::Checkpoint("frozen encoder seed disagrees with generator config".into()));
    }
    file.schedule.build::<S>()?;
    let mut generator = Generator::<S>::new(file.generator)?;
    import_params(&mut generator, &file.params)?;
    Ok((generator, file.schedule))
}

pub fn save_checkpoint<S: Scalar>(
    generator: &Generator<S>,
    schedule: &ScheduleConfig,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(generator, schedule)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(Generator<S>, ScheduleConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_checksum;

    fn small() -> Generator<f32> {
        Generator::new(GeneratorConfig {
            resolution: 8,
            base_channels: 4,
            init_seed: 77,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_restores_every_parameter() {
        let g = small();
        let sched = ScheduleConfig {
            steps: 300,
            ..ScheduleConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen.json");
        save_checkpoint(&g, &sched, &path).unwrap();
        let (back, s2) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(s2, sched);
        assert_eq!(param_checksum(&back), param_checksum(&g));
        assert_eq!(back.frozen_checksum(), g.frozen_checksum());
    }

    #[test]
    fn version_and_missing_params_are_reported() {
        let g = small();
        let text = checkpoint_to_string(&g, &ScheduleConfig::default());
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(
            checkpoint_from_str::<f32>(&bumped),
            Err(Error::FormatVersion { found: 2, expected: 1 })
        ));
        let renamed = text.replacen("unet.conv_in.weight", "unet.conv_zz.weight", 1);
        assert!(matches!(checkpoint_from_str::<f32>(&renamed), Err(Error::Checkpoint(_))));
    }
}
