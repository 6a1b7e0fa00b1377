use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::TrainError;
use crate::am::{am_forward, init_am, AmConfig, AmOutput, AM_PREFIX};
use crate::dsp::{features, FeatureConfig, FeatureSeq, Waveform};
use crate::mixsim::MixtureExample;
use crate::separator::{init_separator, separate, SeparationResult, SeparatorConfig, SEP_PREFIX};
use crate::tensor::{load_checkpoint, save_checkpoint, Checkpoint, ParamSet};

/// Separator and acoustic model sharing one parameter set (`sep.*`, `am.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ParamSet,
    pub separator: SeparatorConfig,
    pub am: AmConfig,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    pub separation: SeparationResult,
    pub output: AmOutput,
}

impl Model {
    /// Empty model; call the `init_*` methods or load weights.
    pub fn new(separator: SeparatorConfig, am: AmConfig, features: FeatureConfig) -> Self {
        Self { params: ParamSet::new(), separator, am, features }
    }

    pub fn has_separator(&self) -> bool {
        self.params.names().any(|n| n.starts_with(SEP_PREFIX))
    }

    pub fn has_am(&self) -> bool {
        self.params.names().any(|n| n.starts_with(AM_PREFIX))
    }

    pub fn init_separator<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        init_separator(&mut self.params, &self.separator, rng);
    }

    pub fn init_am<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), TrainError> {
        Ok(init_am(&mut self.params, &self.am, rng)?)
    }

    pub fn features_of(&self, w: &Waveform) -> Result<FeatureSeq, TrainError> {
        Ok(features(w, &self.separator.stft, &self.features)?)
    }

    pub fn separate(&self, mixture: &Waveform) -> Result<SeparationResult, TrainError> {
        Ok(separate(&self.params, &self.separator, mixture)?)
    }

    /// Separation followed by the acoustic model.
    pub fn recognize(&self, mixture: &Waveform) -> Result<Recognition, TrainError> {
        let separation = self.separate(mixture)?;
        let mix = self.features_of(mixture)?;
        let sep = [self.features_of(&separation.est_waveforms[0])?, self.features_of(&separation.est_waveforms[1])?];
        let output = am_forward(&self.params, &self.am, &mix, &sep)?;
        Ok(Recognition { separation, output })
    }

    pub fn recognize_example(&self, ex: &MixtureExample) -> Result<Recognition, TrainError> {
        self.recognize(&ex.mixture)
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for (k, v) in self.separator.to_kv() {
            m.insert(format!("separator.{k}"), v);
        }
        for (k, v) in self.am.to_kv() {
            m.insert(format!("am.{k}"), v);
        }
        m.insert("am.num_classes".into(), self.am.num_classes.to_string());
        m.insert("features.num_bands".into(), self.features.num_bands.to_string());
        m.insert("features.sample_rate".into(), self.features.sample_rate.to_string());
        m
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let ck = Checkpoint { params: self.params.clone(), metadata: self.metadata() };
        save_checkpoint(path, &ck).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let ck = load_checkpoint(path).map_err(|e| TrainError::Checkpoint { path: path.to_path_buf(), detail: e.to_string() })?;
        let bad = |detail: String| TrainError::Checkpoint { path: path.to_path_buf(), detail };
        let mut model = Model::new(SeparatorConfig::default(), AmConfig::default(), FeatureConfig::default());
        for (k, v) in &ck.metadata {
            let r = if let Some(k) = k.strip_prefix("separator.") {
                model.separator.set(k, v)
            } else if k == "am.num_classes" {
                v.parse().map(|n| model.am.num_classes = n).map_err(|_| format!("bad {k}"))
            } else if let Some(k) = k.strip_prefix("am.") {
                model.am.set(k, v)
            } else if k == "features.num_bands" {
                v.parse().map(|n| model.features.num_bands = n).map_err(|_| format!("bad {k}"))
            } else if k == "features.sample_rate" {
                v.parse().map(|n| model.features.sample_rate = n).map_err(|_| format!("bad {k}"))
            } else {
                Err(format!("unknown metadata key `{k}`"))
            };
            r.map_err(bad)?;
        }
        model.am.feature_dim = model.features.num_bands;
        model.params = ck.params;
        Ok(model)
    }
}
