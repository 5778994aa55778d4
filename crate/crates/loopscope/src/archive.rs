//! Model and lens archives: safetensors weights plus a JSON config.
//!
//! A model directory holds `model.safetensors` and `config.json`; the config
//! may use the Hugging Face GPT-NeoX keys (`hidden_size`, `rotary_pct`, ...)
//! or the field names of [`ModelConfig`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use loopscope_core::lens::{HeadLens, LensSet, LensSharing};
use loopscope_core::math::Matrix;
use loopscope_core::model::{Activation, NamedTensor};
use loopscope_core::{Model, ModelConfig, Weights};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil;

pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const CONFIG_FILE: &str = "config.json";
pub const LENS_FILE: &str = "lenses.safetensors";

/// Config keys accepted from `config.json`.
#[derive(Debug, Deserialize)]
struct RawConfig {
    #[serde(alias = "num_hidden_layers")]
    n_layers: usize,
    #[serde(alias = "num_attention_heads")]
    n_heads: usize,
    #[serde(alias = "hidden_size")]
    d_model: usize,
    d_head: Option<usize>,
    vocab_size: usize,
    intermediate_size: Option<usize>,
    #[serde(alias = "rotary_pct", alias = "partial_rotary_factor")]
    rotary_fraction: Option<f32>,
    #[serde(alias = "rotary_emb_base", alias = "rope_theta")]
    rotary_base: Option<f32>,
    rope_parameters: Option<RopeParameters>,
    #[serde(alias = "max_position_embeddings")]
    max_context: usize,
    #[serde(alias = "use_parallel_residual")]
    parallel_residual: Option<bool>,
    #[serde(alias = "layer_norm_eps")]
    layernorm_epsilon: Option<f32>,
    #[serde(alias = "hidden_act")]
    activation: Option<String>,
    tie_word_embeddings: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct RopeParameters {
    partial_rotary_factor: Option<f32>,
    rope_theta: Option<f32>,
}

/// Parse a model config document.
pub fn parse_config(text: &str, path: &Path) -> Result<ModelConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::format(path, e))?;
    let activation = match raw.activation.as_deref() {
        None | Some("gelu") | Some("Gelu") => Activation::Gelu,
        Some("gelu_new") | Some("gelu_fast") | Some("gelu_pytorch_tanh") | Some("GeluTanh") => Activation::GeluTanh,
        Some(other) => return Err(Error::format(path, format!("unsupported activation `{other}`"))),
    };
    if raw.tie_word_embeddings == Some(true) {
        return Err(Error::format(path, "tied input/output embeddings are not supported"));
    }
    let rope = raw.rope_parameters.as_ref();
    let rotary_fraction = raw.rotary_fraction.or(rope.and_then(|r| r.partial_rotary_factor)).unwrap_or(1.0);
    let rotary_base = raw.rotary_base.or(rope.and_then(|r| r.rope_theta)).unwrap_or(10_000.0);
    let d_head = raw.d_head.unwrap_or(raw.d_model.checked_div(raw.n_heads).unwrap_or(0));
    let config = ModelConfig {
        n_layers: raw.n_layers,
        n_heads: raw.n_heads,
        d_model: raw.d_model,
        d_head,
        vocab_size: raw.vocab_size,
        intermediate_size: raw.intermediate_size.unwrap_or(4 * raw.d_model),
        rotary_fraction,
        rotary_base,
        max_context: raw.max_context,
        parallel_residual: raw.parallel_residual.unwrap_or(true),
        layernorm_epsilon: raw.layernorm_epsilon.unwrap_or(1e-5),
        activation,
    };
    config.validate()?;
    Ok(config)
}

/// `config.json` contents for `config`, readable here and by GPT-NeoX tooling.
pub fn config_json(config: &ModelConfig) -> String {
    let act = match config.activation {
        Activation::Gelu => "gelu",
        Activation::GeluTanh => "gelu_new",
    };
    let doc = serde_json::json!({
        "architectures": ["GPTNeoXForCausalLM"],
        "model_type": "gpt_neox",
        "num_hidden_layers": config.n_layers,
        "num_attention_heads": config.n_heads,
        "hidden_size": config.d_model,
        "vocab_size": config.vocab_size,
        "intermediate_size": config.intermediate_size,
        "rotary_pct": config.rotary_fraction,
        "rotary_emb_base": config.rotary_base,
        "max_position_embeddings": config.max_context,
        "use_parallel_residual": config.parallel_residual,
        "layer_norm_eps": config.layernorm_epsilon,
        "hidden_act": act,
        "tie_word_embeddings": false,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("static document");
    s.push('\n');
    s
}

fn to_f32(path: &Path, name: &str, view: &TensorView<'_>) -> Result<Vec<f32>> {
    let bytes = view.data();
    let out = match view.dtype() {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        Dtype::F16 => bytes.chunks_exact(2).map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32()).collect(),
        Dtype::BF16 => bytes.chunks_exact(2).map(|c| half::bf16::from_le_bytes([c[0], c[1]]).to_f32()).collect(),
        Dtype::F64 => {
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")) as f32).collect()
        }
        other => return Err(Error::format(path, format!("tensor `{name}` has unsupported dtype {other:?}"))),
    };
    Ok(out)
}

/// All floating-point tensors of a safetensors file, widened to `f32`.
pub struct TensorFile {
    path: PathBuf,
    bytes: Vec<u8>,
}

impl TensorFile {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        SafeTensors::deserialize(&bytes).map_err(|e| Error::format(path, e))?;
        Ok(Self { path: path.to_path_buf(), bytes })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn tensors(&self) -> SafeTensors<'_> {
        SafeTensors::deserialize(&self.bytes).expect("validated on open")
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.tensors().names().into_iter().map(String::from).collect();
        names.sort();
        names
    }

    /// `Ok(None)` when the tensor is absent.
    pub fn get(&self, name: &str) -> Result<Option<(Vec<usize>, Vec<f32>)>> {
        let st = self.tensors();
        match st.tensor(name) {
            Ok(view) => Ok(Some((view.shape().to_vec(), to_f32(&self.path, name, &view)?))),
            Err(_) => Ok(None),
        }
    }

    /// The string map stored in the file header.
    pub fn metadata(&self) -> Result<BTreeMap<String, String>> {
        let (_, meta) = SafeTensors::read_metadata(&self.bytes).map_err(|e| Error::format(&self.path, e))?;
        Ok(meta.metadata().clone().map(|m| m.into_iter().collect()).unwrap_or_default())
    }
}

/// Serialise `f32` tensors with an optional metadata map.
pub fn tensors_to_bytes(tensors: &[NamedTensor], metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone(), t.data.iter().flat_map(|v| v.to_le_bytes()).collect()))
        .collect();
    let views = raw
        .iter()
        .map(|(name, shape, bytes)| TensorView::new(Dtype::F32, shape.clone(), bytes).map(|v| (name.clone(), v)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Input(format!("tensor serialisation: {e}")))?;
    // a single-entry map keeps the header byte-stable
    let info = (!metadata.is_empty())
        .then(|| HashMap::from([("loopscope".to_string(), serde_json::to_string(metadata).expect("string map"))]));
    safetensors::tensor::serialize(views, &info).map_err(|e| Error::Input(format!("tensor serialisation: {e}")))
}

fn unpack_metadata(file: &TensorFile) -> Result<BTreeMap<String, String>> {
    let meta = file.metadata()?;
    match meta.get("loopscope") {
        Some(s) => serde_json::from_str(s).map_err(|e| Error::format(&file.path, e)),
        None => Ok(meta),
    }
}

/// A loaded model and its identity.
pub struct LoadedModel {
    pub model: Model,
    /// SHA-256 over the weight file bytes followed by the config bytes.
    pub model_id: String,
    pub dir: PathBuf,
}

pub fn model_id(weights: &[u8], config: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(weights);
    h.update(config);
    format!("{:x}", h.finalize())
}

pub fn load_model_files(archive: &Path, config_path: &Path) -> Result<LoadedModel> {
    let config_bytes = fs::read(config_path).map_err(|e| Error::io(config_path, e))?;
    let text = String::from_utf8(config_bytes.clone()).map_err(|e| Error::format(config_path, e))?;
    let config = parse_config(&text, config_path)?;
    let file = TensorFile::open(archive)?;
    let mut failure = None;
    let weights = Weights::from_tensors(&config, |name| match file.get(name) {
        Ok(t) => t,
        Err(e) => {
            failure.get_or_insert(e);
            None
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let weights = weights.map_err(|e| Error::format(archive, e))?;
    let model = Model::new(config, weights)?;
    Ok(LoadedModel {
        model,
        model_id: model_id(file.bytes(), &config_bytes),
        dir: archive.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "model directory not found")));
    }
    load_model_files(&dir.join(WEIGHTS_FILE), &dir.join(CONFIG_FILE))
}

/// Write `model.safetensors` and `config.json` into `dir`.
pub fn save_model(dir: &Path, config: &ModelConfig, weights: &Weights) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = tensors_to_bytes(&weights.to_tensors(config), &BTreeMap::new())?;
    fsutil::write_atomic(&dir.join(WEIGHTS_FILE), &bytes)?;
    fsutil::write_atomic(&dir.join(CONFIG_FILE), config_json(config).as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct LensMeta {
    n_layers: usize,
    n_heads: usize,
    sharing: LensSharing,
    steps: usize,
    /// `None` for heads that were never trained.
    final_kl: Vec<Option<f64>>,
}

pub fn lens_tensor_name(layer: usize, head: usize, part: char) -> String {
    format!("lens.l{layer}.h{head}.{part}")
}

pub fn lenses_to_bytes(set: &LensSet, extra: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(set.lenses.len() * 2);
    for lens in &set.lenses {
        let d = lens.bias.len();
        tensors.push(NamedTensor {
            name: lens_tensor_name(lens.layer, lens.head, 'W'),
            shape: vec![d, d],
            data: lens.weight.data.clone(),
        });
        tensors.push(NamedTensor {
            name: lens_tensor_name(lens.layer, lens.head, 'b'),
            shape: vec![d],
            data: lens.bias.clone(),
        });
    }
    let meta = LensMeta {
        n_layers: set.n_layers,
        n_heads: set.n_heads,
        sharing: set.sharing,
        steps: set.lenses.first().map_or(0, |l| l.steps),
        final_kl: set.lenses.iter().map(|l| l.final_kl.is_finite().then_some(l.final_kl)).collect(),
    };
    let mut map = extra.clone();
    map.insert("lens_set".into(), serde_json::to_string(&meta).expect("plain struct"));
    tensors_to_bytes(&tensors, &map)
}

pub fn save_lenses(path: &Path, set: &LensSet, extra: &BTreeMap<String, String>) -> Result<()> {
    fsutil::write_atomic(path, &lenses_to_bytes(set, extra)?)
}

pub fn load_lenses(path: &Path) -> Result<LensSet> {
    let file = TensorFile::open(path)?;
    let meta = unpack_metadata(&file)?;
    let meta: LensMeta = meta
        .get("lens_set")
        .ok_or_else(|| Error::format(path, "not a lens archive (no lens_set metadata)"))
        .and_then(|s| serde_json::from_str(s).map_err(|e| Error::format(path, e)))?;
    let mut lenses = Vec::with_capacity(meta.n_layers * meta.n_heads);
    for layer in 0..meta.n_layers {
        for head in 0..meta.n_heads {
            let fetch = |part| {
                let name = lens_tensor_name(layer, head, part);
                file.get(&name)?.ok_or_else(|| Error::format(path, format!("missing tensor `{name}`")))
            };
            let (wshape, w) = fetch('W')?;
            let (bshape, b) = fetch('b')?;
            let d = bshape.first().copied().unwrap_or(0);
            if wshape != [d, d] || bshape.len() != 1 {
                return Err(Error::format(path, format!("lens l{layer} h{head} has shapes {wshape:?} and {bshape:?}")));
            }
            let idx = layer * meta.n_heads + head;
            lenses.push(HeadLens {
                layer,
                head,
                weight: Matrix::from_vec(d, d, w),
                bias: b,
                steps: meta.steps,
                final_kl: meta.final_kl.get(idx).copied().flatten().unwrap_or(f64::NAN),
            });
        }
    }
    if lenses.iter().any(|l| !l.is_finite()) {
        return Err(Error::format(path, "lens parameters are not finite"));
    }
    Ok(LensSet { n_layers: meta.n_layers, n_heads: meta.n_heads, sharing: meta.sharing, lenses })
}
