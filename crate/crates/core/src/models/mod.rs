//! Full-image DMSC and DMSC+ networks.
//!
//! DMSC: `H1_side` features of the guidance feed a LISTA encoder whose codes
//! are the side information of a LeSITA encoder run on `H1_main` features
//! of the upscaled input; a linear decoder maps codes to patch channels and
//! `H2` aggregates them into one output channel. DMSC+ adds an enhancement
//! branch on the input alone (`H3`, LISTA, decoder, `H4`) whose output is
//! added to the DMSC output.
//!
//! Encoders act as 1x1 maps on `(channels, positions)` feature matrices. All
//! convolutions are zero padded to preserve spatial size.

pub mod checkpoint;
pub mod train;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use train::{train, EpochReport, TrainConfig, TrainSample, TrainingReport};

use crate::dataset::check_scale;
use crate::diffengine::{Graph, Model, NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::imageops::ImagePlane;
use crate::tensor::{Real, Tensor};
use crate::unfolded::{gaussian_shaped, record_lesita, record_lista, INIT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl Precision {
    pub fn code(self) -> u32 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Precision::Single),
            1 => Ok(Precision::Double),
            _ => Err(Error::MalformedHeader(format!("precision code {c}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Precision::Single),
            "double" => Ok(Precision::Double),
            _ => Err(Error::Config(format!("precision must be single or double, got `{s}`"))),
        }
    }
}

pub const MAX_STAGES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub feat_filters: usize,
    pub feat_kernel: usize,
    pub code_dim: usize,
    pub patch_dim: usize,
    pub agg_kernel: usize,
    pub stages: usize,
    pub scale: usize,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feat_filters: 100,
            feat_kernel: 7,
            code_dim: 128,
            patch_dim: 7,
            agg_kernel: 5,
            stages: 3,
            scale: 2,
            precision: Precision::Double,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for (name, v) in [
            ("feat_filters", self.feat_filters),
            ("code_dim", self.code_dim),
            ("patch_dim", self.patch_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("feat_kernel", self.feat_kernel), ("agg_kernel", self.agg_kernel)] {
            if v % 2 == 0 {
                return bad(format!("{name} must be odd, got {v}"));
            }
        }
        if self.stages == 0 || self.stages > MAX_STAGES {
            return bad(format!("stages must be in 1..={MAX_STAGES}, got {}", self.stages));
        }
        check_scale(self.scale)
    }

    /// Decoder output channels.
    pub fn patch_channels(&self) -> usize {
        self.patch_dim * self.patch_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Dmsc,
    DmscPlus,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Dmsc => "dmsc",
            ModelKind::DmscPlus => "dmsc+",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dmsc" => Ok(ModelKind::Dmsc),
            "dmsc+" | "dmscplus" => Ok(ModelKind::DmscPlus),
            _ => Err(Error::Config(format!("model must be dmsc or dmsc+, got `{s}`"))),
        }
    }
}

/// Parameter groups of the two paths of DMSC+.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Base,
    Enhancement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub nonneg: bool,
    pub branch: Branch,
    kind: InitKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InitKind {
    Weight,
    Bias,
    Threshold,
}

/// Architecture without weights; implements [`Model`] over a parameter store.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub config: ModelConfig,
}

impl Architecture {
    pub fn new(kind: ModelKind, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { kind, config })
    }

    /// Canonical parameter list, in checkpoint order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let (m, k, n, p, a) = (c.feat_filters, c.feat_kernel, c.code_dim, c.patch_channels(), c.agg_kernel);
        let spec = |name, shape: &[usize], kind, branch| ParamSpec {
            name,
            shape: shape.to_vec(),
            nonneg: kind == InitKind::Threshold,
            branch,
            kind,
        };
        use Branch::*;
        use InitKind::*;
        let mut v = vec![
            spec("h1_main.w", &[m, 1, k, k], Weight, Base),
            spec("h1_main.b", &[m], Bias, Base),
            spec("h1_side.w", &[m, 1, k, k], Weight, Base),
            spec("h1_side.b", &[m], Bias, Base),
            spec("lesita.R", &[n, m], Weight, Base),
            spec("lesita.Q", &[n, n], Weight, Base),
            spec("lesita.mu", &[], Threshold, Base),
            spec("lista_side.W", &[n, m], Weight, Base),
            spec("lista_side.S", &[n, n], Weight, Base),
            spec("lista_side.gamma", &[], Threshold, Base),
            spec("dec.Dx", &[p, n], Weight, Base),
            spec("h2.w", &[1, p, a, a], Weight, Base),
            spec("h2.b", &[1], Bias, Base),
        ];
        if self.kind == ModelKind::DmscPlus {
            v.extend([
                spec("h3.w", &[m, 1, k, k], Weight, Enhancement),
                spec("h3.b", &[m], Bias, Enhancement),
                spec("lista_enh.W", &[n, m], Weight, Enhancement),
                spec("lista_enh.S", &[n, n], Weight, Enhancement),
                spec("lista_enh.gamma", &[], Threshold, Enhancement),
                spec("dec_enh.Dx", &[p, n], Weight, Enhancement),
                spec("h4.w", &[1, p, a, a], Weight, Enhancement),
                spec("h4.b", &[1], Bias, Enhancement),
            ]);
        }
        v
    }

    fn conv<F: Real>(
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        layer: &str,
        input: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let wt = g.param(store, &format!("{layer}.w"))?;
        let b = g.param(store, &format!("{layer}.b"))?;
        g.conv2d(input, wt, b, h, w, layer)
    }

    /// Records the network on `(1, h*w)` inputs and returns the `(1, h*w)`
    /// output node.
    pub fn record<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        y: NodeId,
        z: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let t = self.config.stages;
        let side_feat = Self::conv(g, store, "h1_side", z, h, w)?;
        let side = record_lista(g, store, "lista_side", side_feat, t)?;
        let main_feat = Self::conv(g, store, "h1_main", y, h, w)?;
        let code = record_lesita(g, store, "lesita", main_feat, side, t)?;
        let dx = g.param(store, "dec.Dx")?;
        let patches = g.matmul(dx, code, "dec")?;
        let base = Self::conv(g, store, "h2", patches, h, w)?;
        if self.kind == ModelKind::Dmsc {
            return Ok(base);
        }
        let enh_feat = Self::conv(g, store, "h3", y, h, w)?;
        let enh_code = record_lista(g, store, "lista_enh", enh_feat, t)?;
        let dxe = g.param(store, "dec_enh.Dx")?;
        let enh_patches = g.matmul(dxe, enh_code, "dec_enh")?;
        let enh = Self::conv(g, store, "h4", enh_patches, h, w)?;
        g.add(base, enh, "fusion")
    }
}

impl<F: Real> Model<F> for Architecture {
    type Sample = TrainSample<F>;

    fn loss(&self, g: &mut Graph<F>, store: &ParamStore<F>, s: &TrainSample<F>) -> Result<NodeId> {
        let y = g.input("y", s.y.clone())?;
        let z = g.input("z", s.z.clone())?;
        let x = g.input("x", s.x.clone())?;
        let out = self.record(g, store, y, z, s.height, s.width)?;
        g.sse(out, x, "loss")
    }
}

pub(crate) fn plane_tensor<F: Real>(img: &ImagePlane) -> Tensor<F> {
    let data = img.pixels().iter().map(|&v| F::lit(v)).collect();
    Tensor::from_vec(&[1, img.pixels().len()], data).expect("plane length")
}

/// Weights and architecture of a DMSC or DMSC+ network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub arch: Architecture,
    pub store: ParamStore<F>,
}

impl<F: Real> Network<F> {
    /// Gaussian weights with standard deviation 0.1, zero biases and
    /// thresholds 0.15, drawn in canonical order from one seeded stream.
    pub fn random(kind: ModelKind, config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(kind, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in arch.param_specs() {
            let value = match s.kind {
                InitKind::Weight => gaussian_shaped(&mut rng, &s.shape),
                InitKind::Bias => Tensor::zeros(&s.shape),
                InitKind::Threshold => Tensor::scalar(F::lit(INIT_THRESHOLD)),
            };
            store.insert(s.name, value, s.nonneg)?;
        }
        Ok(Self { arch, store })
    }

    /// All parameters zero.
    pub fn zeros(kind: ModelKind, config: ModelConfig) -> Result<Self> {
        let arch = Architecture::new(kind, config)?;
        let mut store = ParamStore::new();
        for s in arch.param_specs() {
            store.insert(s.name, Tensor::zeros(&s.shape), s.nonneg)?;
        }
        Ok(Self { arch, store })
    }

    /// Adopts `store` after checking names and shapes against the canonical
    /// parameter list.
    pub fn from_store(kind: ModelKind, config: ModelConfig, store: ParamStore<F>) -> Result<Self> {
        let arch = Architecture::new(kind, config)?;
        let specs = arch.param_specs();
        if store.len() != specs.len() {
            return Err(Error::ConfigMismatch(format!(
                "{kind} expects {} tensors, got {}",
                specs.len(),
                store.len()
            )));
        }
        for s in &specs {
            let got = store
                .get(s.name)
                .map_err(|_| Error::ConfigMismatch(format!("missing tensor `{}`", s.name)))?;
            if got.value.shape() != s.shape.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "tensor `{}` has shape {:?}, config implies {:?}",
                    s.name,
                    got.value.shape(),
                    s.shape
                )));
            }
        }
        Ok(Self { arch, store })
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Sets every parameter of `branch` to zero.
    pub fn zero_branch(&mut self, branch: Branch) -> Result<()> {
        for s in self.arch.param_specs() {
            if s.branch == branch {
                self.store.set_value(s.name, Tensor::zeros(&s.shape))?;
            }
        }
        Ok(())
    }

    /// Runs the network on an upscaled input and the guidance luminance.
    pub fn forward(&self, y: &ImagePlane, z: &ImagePlane) -> Result<ImagePlane> {
        if y.dims() != z.dims() {
            return Err(Error::Shape(format!(
                "input is {:?} but guidance is {:?}",
                y.dims(),
                z.dims()
            )));
        }
        if y.is_empty() {
            return Err(Error::Shape("empty input image".into()));
        }
        let (w, h) = y.dims();
        let mut g = Graph::new();
        let yn = g.input("y", plane_tensor(y))?;
        let zn = g.input("z", plane_tensor(z))?;
        let out = self.arch.record(&mut g, &self.store, yn, zn, h, w)?;
        let pixels = g.value(out).data().iter().map(|v| v.as_f64()).collect();
        ImagePlane::new(w, h, pixels)
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            arch: self.arch,
            store: self.store.cast(),
        }
    }
}

/// DMSC output for a network of kind [`ModelKind::Dmsc`].
pub fn dmsc_forward<F: Real>(net: &Network<F>, y: &ImagePlane, z: &ImagePlane) -> Result<ImagePlane> {
    if net.kind() != ModelKind::Dmsc {
        return Err(Error::ConfigMismatch("expected a DMSC network".into()));
    }
    net.forward(y, z)
}

/// DMSC+ output: the DMSC path plus the enhancement path.
pub fn dmscplus_forward<F: Real>(net: &Network<F>, y: &ImagePlane, z: &ImagePlane) -> Result<ImagePlane> {
    if net.kind() != ModelKind::DmscPlus {
        return Err(Error::ConfigMismatch("expected a DMSC+ network".into()));
    }
    net.forward(y, z)
}
