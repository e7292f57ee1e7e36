//! The trained parameter set of all three networks plus everything needed
//! to use it again: charset, architecture specs and provenance.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::safetensors::Load;
use candle_core::{Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Ctx, ParamKind};
use super::networks::{
    Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Recognizer, RecognizerSpec,
};
use super::{images_to_tensor, tensor_to_images, Charset};
use crate::error::{Error, Result};
use crate::image::LineImage;
use crate::util::derive_seed;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecs {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub recognizer: RecognizerSpec,
}

impl ModelSpecs {
    /// Default architecture for a given charset.
    pub fn for_charset(charset: &Charset) -> Self {
        ModelSpecs {
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            recognizer: RecognizerSpec::new(charset.class_count()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub iterations: u64,
    #[serde(default)]
    pub fine_tuned: bool,
}

/// Which of the three networks a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Network {
    Generator,
    Discriminator,
    Recognizer,
}

impl Network {
    pub const ALL: [Network; 3] = [Network::Generator, Network::Discriminator, Network::Recognizer];

    pub fn prefix(self) -> &'static str {
        match self {
            Network::Generator => "generator",
            Network::Discriminator => "discriminator",
            Network::Recognizer => "recognizer",
        }
    }
}

#[derive(Clone)]
pub struct NamedParam {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
}

pub struct ModelBundle {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub recognizer: Recognizer,
    pub charset: Charset,
    pub specs: ModelSpecs,
    pub provenance: Provenance,
    device: Device,
}

/// Rewrites a serialized safetensors buffer with its JSON header keys in
/// sorted order, so that equal bundles always produce equal bytes (the
/// metadata map is otherwise written in hash order).
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n])?;
    let mut json = serde_json::to_vec(&header)?;
    json.resize(json.len().next_multiple_of(8), b' ');
    let mut out = Vec::with_capacity(8 + json.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

impl ModelBundle {
    /// Freshly initialized networks; the seed fixes every initial weight.
    pub fn new(specs: ModelSpecs, charset: Charset, seed: u64) -> Result<Self> {
        if specs.recognizer.class_count != charset.class_count() {
            return Err(Error::Config(format!(
                "recognizer has {} classes but the charset needs {}",
                specs.recognizer.class_count,
                charset.class_count()
            )));
        }
        let device = Device::Cpu;
        let rng = |name: &str| ChaCha8Rng::seed_from_u64(derive_seed(seed, name));
        let generator = Generator::new(&specs.generator, &mut rng("init/generator"), &device)?;
        let discriminator = Discriminator::new(&specs.discriminator, &mut rng("init/discriminator"), &device)?;
        let recognizer = Recognizer::new(&specs.recognizer, &mut rng("init/recognizer"), &device)?;
        Ok(ModelBundle {
            generator,
            discriminator,
            recognizer,
            charset,
            specs,
            provenance: Provenance::default(),
            device,
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Parameters of one network, names prefixed with the network name.
    pub fn parameters(&self, network: Network) -> Vec<NamedParam> {
        let mut out = Vec::new();
        let prefix = network.prefix();
        let mut f = |name: &str, var: &Var, kind: ParamKind| {
            out.push(NamedParam { name: format!("{prefix}.{name}"), var: var.clone(), kind });
        };
        match network {
            Network::Generator => self.generator.visit(&mut f),
            Network::Discriminator => self.discriminator.visit(&mut f),
            Network::Recognizer => self.recognizer.visit(&mut f),
        }
        out
    }

    pub fn all_parameters(&self) -> Vec<NamedParam> {
        Network::ALL.iter().flat_map(|&n| self.parameters(n)).collect()
    }

    /// Every parameter value, keyed by name, as flat `f32` vectors.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.all_parameters()
            .into_iter()
            .map(|p| Ok((p.name, p.var.as_tensor().flatten_all()?.to_vec1::<f32>()?)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let params = self.all_parameters();
        let tensors: Vec<(String, Tensor)> =
            params.into_iter().map(|p| (p.name, p.var.as_tensor().clone())).collect();
        let mut meta = HashMap::new();
        meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
        meta.insert("charset".to_string(), serde_json::to_string(&self.charset)?);
        meta.insert("specs".to_string(), serde_json::to_string(&self.specs)?);
        meta.insert("provenance".to_string(), serde_json::to_string(&self.provenance)?);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes = safetensors::serialize(tensors, Some(meta))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        std::fs::write(path, canonical_header(bytes)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: String| Error::Checkpoint(format!("{}: {what}", path.display()));
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header.metadata().clone().ok_or_else(|| bad("missing metadata".into()))?;
        let field = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing metadata field {k}")));
        let version = field("format_version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version.clone()));
        }
        let charset: Charset = serde_json::from_str(field("charset")?)?;
        let specs: ModelSpecs = serde_json::from_str(field("specs")?)?;
        let provenance: Provenance = serde_json::from_str(field("provenance")?)?;
        let mut bundle = ModelBundle::new(specs, charset, 0)?;
        bundle.provenance = provenance;
        let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let params = bundle.all_parameters();
        if st.len() != params.len() {
            return Err(bad(format!("{} tensors stored, architecture has {}", st.len(), params.len())));
        }
        for p in params {
            let view = st.tensor(&p.name).map_err(|e| bad(format!("{}: {e}", p.name)))?;
            let t = view.load(&bundle.device)?;
            if t.dims() != p.var.dims() {
                return Err(bad(format!("{} has shape {:?}, expected {:?}", p.name, t.dims(), p.var.dims())));
            }
            p.var.set(&t)?;
        }
        Ok(bundle)
    }

    /// Evaluation-mode generator over same-sized images.
    pub fn enhance(&self, images: &[LineImage]) -> Result<Vec<LineImage>> {
        let x = images_to_tensor(images, &self.device)?;
        let y = self.generator.forward(&x, &mut Ctx::eval())?;
        tensor_to_images(&y)
    }

    /// Evaluation-mode discriminator score maps, one per pair.
    pub fn discriminate(&self, degraded: &[LineImage], candidate: &[LineImage]) -> Result<Vec<LineImage>> {
        let d = images_to_tensor(degraded, &self.device)?;
        let c = images_to_tensor(candidate, &self.device)?;
        let y = self.discriminator.forward(&d, &c, &mut Ctx::eval())?;
        tensor_to_images(&y)
    }

    /// Evaluation-mode recognizer output: per image, `T` probability rows of
    /// length `|charset| + 1`.
    pub fn recognize_frames(&self, images: &[LineImage]) -> Result<Vec<Vec<Vec<f32>>>> {
        let x = images_to_tensor(images, &self.device)?;
        let lp = self.recognizer.forward_log_probs(&x, &mut Ctx::eval())?;
        Ok(lp.exp()?.to_vec3::<f32>()?)
    }

    /// Greedy transcriptions of the given images.
    pub fn transcribe(&self, images: &[LineImage]) -> Result<Vec<String>> {
        Ok(self
            .recognize_frames(images)?
            .iter()
            .map(|frames| super::greedy_ctc_decode(frames, &self.charset))
            .collect())
    }
}
