//! The action-value network.
//!
//! φ encodes the scene heightmap at full resolution, ψ compresses the
//! end-effector maps into a `C x 7 x 7` kernel, and that kernel is correlated
//! over φ(s). The decoder turns the correlation map (plus a φ skip) into one
//! logit per pixel. Repeating with the end effector rotated through K angles
//! gives the `H x W x K` map.
//!
//! Training only ever needs the logit at one pixel, so [`window_logit`]
//! evaluates the network on the receptive field around that pixel instead of
//! the whole map.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{rotate_values, Interp, MapGeometry};
use crate::repr::{EndEffectorRepr, SceneObs, EE_CHANNELS};
use crate::tensor::kernels::{self, Padding};
use crate::tensor::{self, Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("bad architecture descriptor: {0}")]
    Descriptor(String),
    #[error("checkpoint does not match its descriptor: {0}")]
    Mismatch(String),
    #[error("checkpoint has no {0} network")]
    MissingNet(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the K rotation slots cover orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AngleRange {
    /// `[0, 2π)`, single-arm actions.
    Full,
    /// `[0, π)`, the bi-manual pincer (symmetric under a half turn).
    Half,
}

impl AngleRange {
    pub fn span(self) -> f64 {
        match self {
            AngleRange::Full => TAU,
            AngleRange::Half => PI,
        }
    }

    pub fn slot_angle(self, k: usize, rotations: usize) -> f64 {
        k as f64 * self.span() / rotations as f64
    }
}

const KERNEL: usize = 3;
const SCENE_RES: usize = 64;
const EE_RES: usize = 112;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub feat_channels: usize,
    pub phi_layers: usize,
    pub psi_layers: usize,
    pub decoder_hidden: usize,
    pub rotations: usize,
    pub init_seed: u64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            feat_channels: 16,
            phi_layers: 3,
            psi_layers: 4,
            decoder_hidden: 16,
            rotations: 16,
            init_seed: 0,
        }
    }
}

impl Architecture {
    /// Spatial extent of ψ(e): each stride-2 layer halves the map.
    pub fn ee_kernel(&self) -> usize {
        let mut n = EE_RES;
        for _ in 0..self.psi_layers {
            n = (n + 2 - KERNEL) / 2 + 1;
        }
        n
    }

    /// Fixed normalisation of the correlation so logits start near zero.
    pub fn cross_scale(&self) -> f32 {
        let ke = self.ee_kernel();
        1.0 / ((self.feat_channels * ke * ke) as f32).sqrt()
    }

    /// Half-width of the scene window one output logit depends on.
    pub fn receptive_radius(&self) -> usize {
        self.phi_layers * (KERNEL / 2) + self.ee_kernel() / 2 + 2 * (KERNEL / 2)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.rotations == 0 || self.feat_channels == 0 || self.phi_layers == 0 || self.psi_layers == 0 || self.decoder_hidden == 0 {
            return Err(ModelError::Descriptor("all layer counts and sizes must be positive".into()));
        }
        if self.ee_kernel() % 2 == 0 {
            return Err(ModelError::Descriptor(format!("ψ output extent {} must be odd", self.ee_kernel())));
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.feat_channels;
        let mut out = Vec::new();
        for l in 0..self.phi_layers {
            let cin = if l == 0 { 1 } else { c };
            out.push((format!("phi.{l}.w"), vec![c, cin, KERNEL, KERNEL]));
            out.push((format!("phi.{l}.b"), vec![c]));
        }
        for l in 0..self.psi_layers {
            let cin = if l == 0 { EE_CHANNELS } else { c };
            out.push((format!("psi.{l}.w"), vec![c, cin, KERNEL, KERNEL]));
            out.push((format!("psi.{l}.b"), vec![c]));
        }
        let h = self.decoder_hidden;
        out.push(("dec.0.w".into(), vec![h, 1 + c, KERNEL, KERNEL]));
        out.push(("dec.0.b".into(), vec![h]));
        out.push(("dec.1.w".into(), vec![1, h, KERNEL, KERNEL]));
        out.push(("dec.1.b".into(), vec![1]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub fn to_descriptor(&self) -> String {
        format!(
            "feat_channels={}\nphi_layers={}\npsi_layers={}\ndecoder_hidden={}\ndecoder_skip=phi\nkernel={KERNEL}\nee_kernel={}\nrotations={}\ninit_seed={}\nparam_count={}\n",
            self.feat_channels,
            self.phi_layers,
            self.psi_layers,
            self.decoder_hidden,
            self.ee_kernel(),
            self.rotations,
            self.init_seed,
            self.param_count()
        )
    }

    /// Parse `key=value` lines. Unknown keys are rejected; derived keys
    /// (`ee_kernel`, `param_count`, ...) are checked against the arithmetic.
    pub fn from_descriptor(text: &str) -> Result<Self, ModelError> {
        let kv = parse_kv(text)?;
        Self::from_kv(&kv, "")
    }

    fn from_kv(kv: &BTreeMap<String, String>, prefix: &str) -> Result<Self, ModelError> {
        let get = |k: &str| -> Result<&str, ModelError> {
            kv.get(&format!("{prefix}{k}"))
                .map(String::as_str)
                .ok_or_else(|| ModelError::Descriptor(format!("missing key {prefix}{k}")))
        };
        let num = |k: &str| -> Result<u64, ModelError> {
            get(k)?.parse().map_err(|_| ModelError::Descriptor(format!("{prefix}{k} is not an integer")))
        };
        let arch = Self {
            feat_channels: num("feat_channels")? as usize,
            phi_layers: num("phi_layers")? as usize,
            psi_layers: num("psi_layers")? as usize,
            decoder_hidden: num("decoder_hidden")? as usize,
            rotations: num("rotations")? as usize,
            init_seed: num("init_seed")?,
        };
        arch.validate()?;
        if num("kernel")? as usize != KERNEL || get("decoder_skip")? != "phi" {
            return Err(ModelError::Descriptor("unsupported layer type".into()));
        }
        if num("ee_kernel")? as usize != arch.ee_kernel() {
            return Err(ModelError::Descriptor("ee_kernel disagrees with psi_layers".into()));
        }
        if num("param_count")? as usize != arch.param_count() {
            return Err(ModelError::Descriptor("param_count disagrees with layer sizes".into()));
        }
        Ok(arch)
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ModelError> {
    let mut kv = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Descriptor(format!("line without '=': {line}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

/// Weights of one network, in [`Architecture::param_shapes`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaeParams {
    pub arch: Architecture,
    pub tensors: Vec<Tensor<f32>>,
}

impl TaeParams {
    /// Uniform fan-in initialisation: weights in `±sqrt(6 / fan_in)`, biases in `±1/sqrt(fan_in)`.
    pub fn init(arch: Architecture) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(arch.init_seed);
        let shapes = arch.param_shapes();
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut fan_in = 1;
        for (name, shape) in &shapes {
            let n: usize = shape.iter().product();
            let bound = if name.ends_with(".w") {
                fan_in = shape[1..].iter().product::<usize>();
                (6.0 / fan_in as f64).sqrt()
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            let data = (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect();
            tensors.push(Tensor::new(shape.clone(), data)?);
        }
        Ok(Self { arch, tensors })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.arch
            .param_shapes()
            .into_iter()
            .zip(&self.tensors)
            .map(|((n, _), t)| (format!("{prefix}{n}"), t.clone()))
            .collect()
    }

    fn from_named(arch: Architecture, named: &BTreeMap<String, Tensor<f32>>, prefix: &str) -> Result<Self, ModelError> {
        let mut tensors = Vec::new();
        for (name, shape) in arch.param_shapes() {
            let key = format!("{prefix}{name}");
            let t = named.get(&key).ok_or_else(|| ModelError::Mismatch(format!("missing tensor {key}")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Mismatch(format!("{key} has shape {:?}, expected {shape:?}", t.shape())));
            }
            tensors.push(t.clone());
        }
        Ok(Self { arch, tensors })
    }

    fn phi(&self, l: usize) -> (&Tensor, &Tensor) {
        (&self.tensors[2 * l], &self.tensors[2 * l + 1])
    }

    fn psi(&self, l: usize) -> (&Tensor, &Tensor) {
        let o = 2 * self.arch.phi_layers;
        (&self.tensors[o + 2 * l], &self.tensors[o + 2 * l + 1])
    }

    fn dec(&self, l: usize) -> (&Tensor, &Tensor) {
        let o = 2 * (self.arch.phi_layers + self.arch.psi_layers);
        (&self.tensors[o + 2 * l], &self.tensors[o + 2 * l + 1])
    }
}

/// Which action primitive a network scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetKind {
    Grasp,
    Push,
}

impl NetKind {
    pub const ALL: [NetKind; 2] = [NetKind::Grasp, NetKind::Push];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Grasp => "grasp",
            NetKind::Push => "push",
        }
    }
}

/// One checkpoint: a network per action primitive (either may be absent).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub nets: BTreeMap<NetKind, TaeParams>,
    /// Free-form `key=value` provenance (tasks trained on, steps, ...).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn net(&self, kind: NetKind) -> Result<&TaeParams, ModelError> {
        self.nets.get(&kind).ok_or_else(|| ModelError::MissingNet(kind.name().into()))
    }

    pub fn descriptor_path(path: &Path) -> std::path::PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".arch");
        p.into()
    }

    pub fn descriptor(&self) -> String {
        let mut s = String::new();
        let nets: Vec<&str> = self.nets.keys().map(|k| k.name()).collect();
        s.push_str(&format!("nets={}\n", nets.join(",")));
        for (kind, p) in &self.nets {
            for line in p.arch.to_descriptor().lines() {
                s.push_str(&format!("{}.{line}\n", kind.name()));
            }
        }
        for (k, v) in &self.meta {
            s.push_str(&format!("meta.{k}={v}\n"));
        }
        s
    }

    /// Writes the tensor file at `path` and the descriptor next to it.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut all = Vec::new();
        for (kind, p) in &self.nets {
            all.extend(p.named(&format!("{}.", kind.name())));
        }
        tensor::save_tensors(path, &all)?;
        std::fs::write(Self::descriptor_path(path), self.descriptor())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(Self::descriptor_path(path))?;
        let kv = parse_kv(&text)?;
        let named: BTreeMap<String, Tensor<f32>> = tensor::load_tensors(path)?.into_iter().collect();
        let mut ckpt = Checkpoint::default();
        let listed = kv.get("nets").ok_or_else(|| ModelError::Descriptor("missing key nets".into()))?;
        let mut expected = 0;
        for name in listed.split(',').filter(|s| !s.is_empty()) {
            let kind = NetKind::ALL
                .into_iter()
                .find(|k| k.name() == name)
                .ok_or_else(|| ModelError::Descriptor(format!("unknown net {name}")))?;
            let arch = Architecture::from_kv(&kv, &format!("{name}."))?;
            let params = TaeParams::from_named(arch, &named, &format!("{name}."))?;
            expected += params.tensors.len();
            ckpt.nets.insert(kind, params);
        }
        if expected != named.len() {
            return Err(ModelError::Mismatch(format!("{} tensors on disk, descriptor accounts for {expected}", named.len())));
        }
        for (k, v) in kv {
            if let Some(m) = k.strip_prefix("meta.") {
                ckpt.meta.insert(m.to_string(), v);
            }
        }
        Ok(ckpt)
    }
}

/// `[1, 64, 64]` scene tensor.
pub fn scene_tensor(s: &SceneObs) -> Result<Tensor, ModelError> {
    let h = &s.height;
    if h.width != SCENE_RES || h.height != SCENE_RES {
        return Err(TensorError::Shape(format!("scene must be {SCENE_RES}x{SCENE_RES}, got {}x{}", h.height, h.width)).into());
    }
    Ok(Tensor::new(vec![1, SCENE_RES, SCENE_RES], h.values.clone())?)
}

/// `[4, 112, 112]` end-effector tensor, channel-first.
pub fn ee_tensor(e: &EndEffectorRepr) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(EE_CHANNELS * EE_RES * EE_RES);
    for m in e.channels() {
        if m.width != EE_RES || m.height != EE_RES {
            return Err(TensorError::Shape(format!("end effector must be {EE_RES}x{EE_RES}, got {}x{}", m.height, m.width)).into());
        }
        data.extend_from_slice(&m.values);
    }
    Ok(Tensor::new(vec![EE_CHANNELS, EE_RES, EE_RES], data)?)
}

/// Rotate an end-effector tensor about its center: depth bilinear, masks nearest.
pub fn rotate_ee(e: &Tensor, angle: f64) -> Tensor {
    let n = e.shape()[1];
    let mut out = Tensor::zeros(e.shape());
    for c in 0..e.shape()[0] {
        let mode = if c % 2 == 0 { Interp::Bilinear } else { Interp::Nearest };
        rotate_values(&e.data()[c * n * n..(c + 1) * n * n], &mut out.data_mut()[c * n * n..(c + 1) * n * n], n, angle, mode);
    }
    out
}

/// φ(s): `[C, 64, 64]`.
pub fn encode_scene(s: &SceneObs, p: &TaeParams) -> Result<Tensor, ModelError> {
    phi_forward(&scene_tensor(s)?, p)
}

/// ψ(e): `[C, 7, 7]`.
pub fn encode_ee(e: &EndEffectorRepr, p: &TaeParams) -> Result<Tensor, ModelError> {
    psi_forward(&ee_tensor(e)?, p)
}

fn phi_forward(s: &Tensor, p: &TaeParams) -> Result<Tensor, ModelError> {
    if s.shape() != [1, SCENE_RES, SCENE_RES] {
        return Err(TensorError::Shape(format!("scene tensor must be [1,{SCENE_RES},{SCENE_RES}], got {:?}", s.shape())).into());
    }
    let mut x = s.clone();
    for l in 0..p.arch.phi_layers {
        let (w, b) = p.phi(l);
        x = kernels::conv2d(&x, w, Some(b), 1, Padding::Same)?;
        kernels::relu_inplace(&mut x);
    }
    Ok(x)
}

fn psi_forward(e: &Tensor, p: &TaeParams) -> Result<Tensor, ModelError> {
    if e.shape() != [EE_CHANNELS, EE_RES, EE_RES] {
        return Err(TensorError::Shape(format!("end-effector tensor must be [{EE_CHANNELS},{EE_RES},{EE_RES}], got {:?}", e.shape())).into());
    }
    let mut x = e.clone();
    for l in 0..p.arch.psi_layers {
        let (w, b) = p.psi(l);
        x = kernels::conv2d(&x, w, Some(b), 2, Padding::Same)?;
        if l + 1 < p.arch.psi_layers {
            kernels::relu_inplace(&mut x);
        }
    }
    Ok(x)
}

/// ψ of the end effector at every rotation slot. Reusable across scenes.
#[derive(Debug, Clone)]
pub struct EeKernels {
    pub range: AngleRange,
    pub kernels: Vec<Tensor>,
}

pub fn ee_kernels(e: &EndEffectorRepr, p: &TaeParams, range: AngleRange) -> Result<EeKernels, ModelError> {
    let base = ee_tensor(e)?;
    let kernels = (0..p.arch.rotations)
        .into_par_iter()
        .map(|k| psi_forward(&rotate_ee(&base, range.slot_angle(k, p.arch.rotations)), p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EeKernels { range, kernels })
}

/// Per-scene state for decoding: φ(s) and its share of the first decoder layer.
struct SceneCache {
    phi: Tensor,
    dec0_phi: Tensor,
    dec0_cross_w: Tensor,
}

fn scene_cache(s: &Tensor, p: &TaeParams) -> Result<SceneCache, ModelError> {
    let phi = phi_forward(s, p)?;
    let (w, b) = p.dec(0);
    let (h, cin) = (w.shape()[0], w.shape()[1]);
    let kk = KERNEL * KERNEL;
    // dec.0 input channel 0 is the correlation map; the rest is the φ skip
    let mut wc = Vec::with_capacity(h * kk);
    let mut wp = Vec::with_capacity(h * (cin - 1) * kk);
    for o in 0..h {
        let row = &w.data()[o * cin * kk..(o + 1) * cin * kk];
        wc.extend_from_slice(&row[..kk]);
        wp.extend_from_slice(&row[kk..]);
    }
    let wp = Tensor::new(vec![h, cin - 1, KERNEL, KERNEL], wp)?;
    let dec0_phi = kernels::conv2d(&phi, &wp, Some(b), 1, Padding::Same)?;
    Ok(SceneCache {
        phi,
        dec0_phi,
        dec0_cross_w: Tensor::new(vec![h, 1, KERNEL, KERNEL], wc)?,
    })
}

fn decode_slice(cache: &SceneCache, kernel: &Tensor, p: &TaeParams) -> Result<Tensor, ModelError> {
    if kernel.shape().len() != 3 {
        return Err(TensorError::Shape(format!("cross-convolution kernel must be [C,k,k], got {:?}", kernel.shape())).into());
    }
    let mut cross = kernels::conv2d_direct(&cache.phi, kernel, None)?;
    cross.scale(p.arch.cross_scale());
    let mut h = kernels::conv2d_direct(&cross, &cache.dec0_cross_w, None)?;
    h.add_assign(&cache.dec0_phi);
    kernels::relu_inplace(&mut h);
    let (w, b) = p.dec(1);
    Ok(kernels::conv2d_direct(&h, w, Some(b))?)
}

/// Dense map of logits and probabilities, indexed `[i, j, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMap {
    pub logits: Tensor,
    pub probs: Tensor,
}

impl QMap {
    pub fn rotations(&self) -> usize {
        self.logits.shape()[2]
    }

    fn from_slices(slices: &[Tensor]) -> Result<Self, ModelError> {
        let k = slices.len();
        let (h, w) = (slices[0].shape()[1], slices[0].shape()[2]);
        let mut logits = vec![0.0f32; h * w * k];
        for (kk, s) in slices.iter().enumerate() {
            for (px, &v) in s.data().iter().enumerate() {
                logits[px * k + kk] = v;
            }
        }
        let logits = Tensor::new(vec![h, w, k], logits)?;
        let probs = logits.map(|z| kernels::sigmoid(z as f64) as f32);
        Ok(Self { logits, probs })
    }
}

/// Evaluate every rotation slot against one scene.
pub fn forward_q_with(kernels: &EeKernels, s: &SceneObs, p: &TaeParams) -> Result<QMap, ModelError> {
    let cache = scene_cache(&scene_tensor(s)?, p)?;
    let slices = kernels
        .kernels
        .par_iter()
        .map(|k| decode_slice(&cache, k, p))
        .collect::<Result<Vec<_>, _>>()?;
    QMap::from_slices(&slices)
}

pub fn forward_q(e: &EndEffectorRepr, s: &SceneObs, p: &TaeParams, range: AngleRange) -> Result<QMap, ModelError> {
    forward_q_with(&ee_kernels(e, p, range)?, s, p)
}

/// One unrotated slice, `[1, 64, 64]` logits.
pub fn forward_slice(e: &EndEffectorRepr, s: &SceneObs, p: &TaeParams) -> Result<Tensor, ModelError> {
    let kernel = encode_ee(e, p)?;
    decode_slice(&scene_cache(&scene_tensor(s)?, p)?, &kernel, p)
}

/// Parameters as graph leaves.
pub struct ParamVars(pub Vec<Var>);

impl ParamVars {
    pub fn new(g: &mut Graph, p: &TaeParams) -> Self {
        Self(p.tensors.iter().map(|t| g.param(t.clone())).collect())
    }

    fn phi(&self, l: usize) -> (Var, Var) {
        (self.0[2 * l], self.0[2 * l + 1])
    }

    fn psi(&self, arch: &Architecture, l: usize) -> (Var, Var) {
        let o = 2 * arch.phi_layers;
        (self.0[o + 2 * l], self.0[o + 2 * l + 1])
    }

    fn dec(&self, arch: &Architecture, l: usize) -> (Var, Var) {
        let o = 2 * (arch.phi_layers + arch.psi_layers);
        (self.0[o + 2 * l], self.0[o + 2 * l + 1])
    }
}

fn psi_graph(g: &mut Graph, pv: &ParamVars, arch: &Architecture, e: Tensor) -> Result<Var, ModelError> {
    let mut x = g.input(e);
    for l in 0..arch.psi_layers {
        let (w, b) = pv.psi(arch, l);
        x = g.conv2d(x, w, Some(b), 2, Padding::Same)?;
        if l + 1 < arch.psi_layers {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Full-map logits for one (already rotated) end effector, on the tape.
pub fn forward_graph(g: &mut Graph, pv: &ParamVars, arch: &Architecture, scene: Tensor, ee_rotated: Tensor) -> Result<Var, ModelError> {
    let mut x = g.input(scene);
    for l in 0..arch.phi_layers {
        let (w, b) = pv.phi(l);
        x = g.conv2d(x, w, Some(b), 1, Padding::Same)?;
        x = g.relu(x);
    }
    let kernel = psi_graph(g, pv, arch, ee_rotated)?;
    let cross = g.cross_convolve(x, kernel, Padding::Same)?;
    let cross = g.scale(cross, arch.cross_scale());
    let cat = g.concat(&[cross, x])?;
    let (w0, b0) = pv.dec(arch, 0);
    let h = g.conv2d(cat, w0, Some(b0), 1, Padding::Same)?;
    let h = g.relu(h);
    let (w1, b1) = pv.dec(arch, 1);
    Ok(g.conv2d(h, w1, Some(b1), 1, Padding::Same)?)
}

/// 0/1 tensor marking which cells of a `size x size` window centred on
/// `(ci, cj)` fall inside the scene map.
fn inside_mask(channels: usize, size: usize, ci: usize, cj: usize) -> Tensor {
    let r = (size / 2) as isize;
    let mut plane = vec![0.0f32; size * size];
    for a in 0..size {
        for b in 0..size {
            let i = ci as isize - r + a as isize;
            let j = cj as isize - r + b as isize;
            if (0..SCENE_RES as isize).contains(&i) && (0..SCENE_RES as isize).contains(&j) {
                plane[a * size + b] = 1.0;
            }
        }
    }
    let data = plane.iter().copied().cycle().take(channels * size * size).collect();
    Tensor::new(vec![channels, size, size], data).expect("sized above")
}

/// Logit at pixel `(i, j)` computed from the receptive field only.
/// Equal (up to float summation order) to `forward_graph` at that pixel.
pub fn window_logit(
    g: &mut Graph,
    pv: &ParamVars,
    arch: &Architecture,
    scene: &Tensor,
    ee_rotated: Tensor,
    i: usize,
    j: usize,
) -> Result<Var, ModelError> {
    if i >= SCENE_RES || j >= SCENE_RES {
        return Err(TensorError::Index { index: vec![i, j], shape: vec![SCENE_RES, SCENE_RES] }.into());
    }
    let r = arch.receptive_radius();
    let size = 2 * r + 1;
    let mut crop = Tensor::zeros(&[1, size, size]);
    for a in 0..size {
        let si = i as isize - r as isize + a as isize;
        if !(0..SCENE_RES as isize).contains(&si) {
            continue;
        }
        for b in 0..size {
            let sj = j as isize - r as isize + b as isize;
            if (0..SCENE_RES as isize).contains(&sj) {
                crop.data_mut()[a * size + b] = scene.data()[si as usize * SCENE_RES + sj as usize];
            }
        }
    }
    let c = arch.feat_channels;
    let mut x = g.input(crop);
    let mut n = size;
    for l in 0..arch.phi_layers {
        let (w, b) = pv.phi(l);
        x = g.conv2d(x, w, Some(b), 1, Padding::Valid)?;
        n -= KERNEL - 1;
        x = g.relu(x);
        x = g.mul_const(x, inside_mask(c, n, i, j))?;
    }
    let kernel = psi_graph(g, pv, arch, ee_rotated)?;
    let cross = g.cross_convolve(x, kernel, Padding::Valid)?;
    let m = n - (arch.ee_kernel() - 1);
    let cross = g.scale(cross, arch.cross_scale());
    let cross = g.mul_const(cross, inside_mask(1, m, i, j))?;
    let off = (n - m) / 2;
    let skip = g.crop(x, off, off, m, m)?;
    let cat = g.concat(&[cross, skip])?;
    let (w0, b0) = pv.dec(arch, 0);
    let h = g.conv2d(cat, w0, Some(b0), 1, Padding::Valid)?;
    let h = g.relu(h);
    let h = g.mul_const(h, inside_mask(arch.decoder_hidden, m - 2, i, j))?;
    let (w1, b1) = pv.dec(arch, 1);
    Ok(g.conv2d(h, w1, Some(b1), 1, Padding::Valid)?)
}

/// One labelled training example: the logit at `(i, j)` of slot `k`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scene: Tensor,
    pub ee: Tensor,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub range: AngleRange,
    pub label: bool,
}

/// Mean BCE over `batch` and its gradient for every parameter.
pub fn loss_and_grads(p: &TaeParams, batch: &[Sample]) -> Result<(f64, Vec<Tensor>), ModelError> {
    let mut g = Graph::new();
    let pv = ParamVars::new(&mut g, p);
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        if s.k >= p.arch.rotations {
            return Err(TensorError::Index { index: vec![s.i, s.j, s.k], shape: vec![SCENE_RES, SCENE_RES, p.arch.rotations] }.into());
        }
        let ee = rotate_ee(&s.ee, s.range.slot_angle(s.k, p.arch.rotations));
        let z = window_logit(&mut g, &pv, &p.arch, &s.scene, ee, s.i, s.j)?;
        terms.push(g.bce_at(z, 0, if s.label { 1.0 } else { 0.0 })?);
    }
    let loss = g.mean(&terms)?;
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(TensorError::NonFinite(format!("loss {value}")).into());
    }
    g.backward(loss)?;
    let grads = pv
        .0
        .iter()
        .zip(&p.tensors)
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, grads))
}

/// Mean BCE without gradients (validation).
pub fn batch_loss(p: &TaeParams, batch: &[Sample]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for s in batch {
        let mut g = Graph::new();
        let pv = ParamVars::new(&mut g, p);
        let ee = rotate_ee(&s.ee, s.range.slot_angle(s.k, p.arch.rotations));
        let z = window_logit(&mut g, &pv, &p.arch, &s.scene, ee, s.i, s.j)?;
        total += kernels::bce_with_logit(g.value(z).data()[0] as f64, if s.label { 1.0 } else { 0.0 });
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Scene geometry the network's pixel grid is defined on.
pub fn scene_geometry() -> MapGeometry {
    MapGeometry::scene()
}
