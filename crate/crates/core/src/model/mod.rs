//! The trainable network: encoder `f`, instance projection head `g_I`, and the
//! centroid matrix that serves as the clustering head.

mod checkpoint;
mod params;

use std::sync::Arc;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Payload,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use params::{BoundParams, Param, ParamStore};

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, GatherMap, Rng, Tape, Var};

/// Fully connected encoder: affine layers with rectifiers between them and none after the last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    /// Input width, hidden widths..., embedding width.
    pub widths: Vec<usize>,
}

impl EncoderSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        let spec = Self { widths };
        spec.validate()?;
        Ok(spec)
    }

    /// `input → 128 → 64 → 32`.
    pub fn default_for(input_dim: usize) -> Self {
        Self {
            widths: vec![input_dim, 128, 64, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::argument(format!(
                "encoder needs at least two positive widths, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }
}

/// Two stride-2, 3×3, zero-padded convolutions followed by a linear map to the embedding.
/// Inputs are channel-last rasters flattened into rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvEncoderSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv_channels: [usize; 2],
    pub embed_dim: usize,
}

const CONV_KERNEL: usize = 3;
const CONV_STRIDE: usize = 2;
const CONV_PAD: usize = 1;

fn conv_out(extent: usize) -> usize {
    (extent + 2 * CONV_PAD - CONV_KERNEL) / CONV_STRIDE + 1
}

impl ConvEncoderSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.height,
            self.width,
            self.channels,
            self.conv_channels[0],
            self.conv_channels[1],
            self.embed_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::argument(format!("conv encoder has a zero dimension: {self:?}")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// `(height, width, channels)` entering each conv layer, plus the final feature map.
    fn geometry(&self) -> [(usize, usize, usize); 3] {
        let (h1, w1) = (conv_out(self.height), conv_out(self.width));
        let (h2, w2) = (conv_out(h1), conv_out(w1));
        [
            (self.height, self.width, self.channels),
            (h1, w1, self.conv_channels[0]),
            (h2, w2, self.conv_channels[1]),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Mlp(EncoderSpec),
    Conv(ConvEncoderSpec),
}

impl EncoderKind {
    pub fn input_dim(&self) -> usize {
        match self {
            EncoderKind::Mlp(s) => s.widths[0],
            EncoderKind::Conv(s) => s.input_dim(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            EncoderKind::Mlp(s) => *s.widths.last().expect("validated widths"),
            EncoderKind::Conv(s) => s.embed_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            EncoderKind::Mlp(s) => s.validate(),
            EncoderKind::Conv(s) => s.validate(),
        }
    }
}

/// `z = W₂ σ(W₁ h + b₁) + b₂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InstanceHeadSpec {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

impl InstanceHeadSpec {
    /// `D → D → 16`.
    pub fn default_for(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            hidden_dim: embed_dim,
            out_dim: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub head: InstanceHeadSpec,
    pub clusters: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head.embed_dim != self.encoder.embed_dim() {
            return Err(Error::argument(format!(
                "instance head expects width {} but the encoder emits {}",
                self.head.embed_dim,
                self.encoder.embed_dim()
            )));
        }
        if self.head.hidden_dim == 0 || self.head.out_dim == 0 {
            return Err(Error::argument("instance head widths must be positive"));
        }
        if self.clusters < 2 {
            return Err(Error::argument(format!("need K >= 2 clusters, got {}", self.clusters)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.embed_dim()
    }

    /// Serializes to the `key=value` lines stored inside checkpoints.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.encoder {
            EncoderKind::Mlp(s) => {
                out.push_str("encoder=mlp\n");
                out.push_str(&format!("encoder.widths={}\n", join(&s.widths)));
            }
            EncoderKind::Conv(s) => {
                out.push_str("encoder=conv\n");
                out.push_str(&format!("encoder.input={},{},{}\n", s.height, s.width, s.channels));
                out.push_str(&format!("encoder.channels={}\n", join(&s.conv_channels)));
                out.push_str(&format!("encoder.embed={}\n", s.embed_dim));
            }
        }
        out.push_str(&format!("head.embed={}\n", self.head.embed_dim));
        out.push_str(&format!("head.hidden={}\n", self.head.hidden_dim));
        out.push_str(&format!("head.out={}\n", self.head.out_dim));
        out.push_str(&format!("clusters={}\n", self.clusters));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(format!("model spec: {msg}"));
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| bad(format!("missing key {k}")));
        let list = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| bad(format!("bad integer list for {k}"))))
                .collect()
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| bad(format!("bad integer for {k}")))
        };
        let encoder = match get("encoder")? {
            "mlp" => EncoderKind::Mlp(EncoderSpec {
                widths: list("encoder.widths")?,
            }),
            "conv" => {
                let input = list("encoder.input")?;
                let ch = list("encoder.channels")?;
                if input.len() != 3 || ch.len() != 2 {
                    return Err(bad("conv geometry has the wrong arity".into()));
                }
                EncoderKind::Conv(ConvEncoderSpec {
                    height: input[0],
                    width: input[1],
                    channels: input[2],
                    conv_channels: [ch[0], ch[1]],
                    embed_dim: num("encoder.embed")?,
                })
            }
            other => return Err(bad(format!("unknown encoder kind {other}"))),
        };
        let spec = ModelSpec {
            encoder,
            head: InstanceHeadSpec {
                embed_dim: num("head.embed")?,
                hidden_dim: num("head.hidden")?,
                out_dim: num("head.out")?,
            },
            clusters: num("clusters")?,
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        Ok(spec)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Name of the centroid tensor inside the [`ParamStore`].
pub const CENTROIDS: &str = "centroids";

/// Network architecture together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound))
}

fn affine(store: &mut ParamStore, rng: &mut Rng, prefix: &str, fan_in: usize, fan_out: usize) {
    let bound = (6.0 / fan_in as f64).sqrt();
    store.push(Param::new(
        format!("{prefix}.weight"),
        uniform_matrix(rng, fan_in, fan_out, bound),
    ));
    store.push(Param::new(format!("{prefix}.bias"), DenseMatrix::zeros(1, fan_out)));
}

impl Model {
    /// Builds a model with He-uniform weights, zero biases and small random centroids.
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        match &spec.encoder {
            EncoderKind::Mlp(s) => {
                for (i, w) in s.widths.windows(2).enumerate() {
                    affine(&mut params, rng, &format!("encoder.{i}"), w[0], w[1]);
                }
            }
            EncoderKind::Conv(s) => {
                let geo = s.geometry();
                for (i, &(_, _, cin)) in geo[..2].iter().enumerate() {
                    let cout = s.conv_channels[i];
                    affine(&mut params, rng, &format!("encoder.conv{i}"), CONV_KERNEL * CONV_KERNEL * cin, cout);
                }
                let (h, w, c) = geo[2];
                affine(&mut params, rng, "encoder.fc", h * w * c, s.embed_dim);
            }
        }
        let head = spec.head;
        affine(&mut params, rng, "instance.0", head.embed_dim, head.hidden_dim);
        affine(&mut params, rng, "instance.1", head.hidden_dim, head.out_dim);
        params.push(Param::new(
            CENTROIDS,
            DenseMatrix::from_fn(spec.clusters, spec.embed_dim(), |_, _| 0.01 * rng.normal()),
        ));
        Ok(Self { spec, params })
    }

    /// Empty store with the right names and shapes; used to validate loaded checkpoints.
    pub fn layout(spec: &ModelSpec) -> Result<ParamStore> {
        Ok(Self::new(spec.clone(), &mut Rng::new(0))?.params)
    }

    pub fn centroid_index(&self) -> usize {
        self.params.len() - 1
    }

    pub fn centroids(&self) -> &DenseMatrix {
        &self.params.get(self.centroid_index()).value
    }

    pub fn set_centroids(&mut self, centroids: DenseMatrix) -> Result<()> {
        let idx = self.centroid_index();
        let p = self.params.get_mut(idx);
        if p.value.shape() != centroids.shape() {
            return Err(Error::shape(format!(
                "centroids must be {:?}, got {:?}",
                p.value.shape(),
                centroids.shape()
            )));
        }
        p.value = centroids;
        Ok(())
    }

    fn head_offset(&self) -> usize {
        self.centroid_index() - 4
    }

    /// `h = f(x)`.
    pub fn encode(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.spec.input_dim() {
            return Err(Error::shape(format!(
                "batch width {width} does not match encoder input {}",
                self.spec.input_dim()
            )));
        }
        match &self.spec.encoder {
            EncoderKind::Mlp(s) => {
                let layers = s.widths.len() - 1;
                let mut h = x;
                for i in 0..layers {
                    h = linear(tape, h, bound.var(2 * i), bound.var(2 * i + 1))?;
                    if i + 1 < layers {
                        h = tape.relu(h);
                    }
                }
                Ok(h)
            }
            EncoderKind::Conv(s) => {
                let geo = s.geometry();
                let n = tape.value(x).rows();
                let mut h = x;
                for i in 0..2 {
                    let map = im2col_map(n, geo[i]);
                    let cols = tape.gather(h, Arc::new(map))?;
                    let y = linear(tape, cols, bound.var(2 * i), bound.var(2 * i + 1))?;
                    let y = tape.relu(y);
                    let (ho, wo, co) = geo[i + 1];
                    h = tape.reshape(y, n, ho * wo * co)?;
                }
                linear(tape, h, bound.var(4), bound.var(5))
            }
        }
    }

    /// `z = g_I(h)`; not normalized.
    pub fn project_instance(&self, tape: &mut Tape, bound: &BoundParams, h: Var) -> Result<Var> {
        let width = tape.value(h).cols();
        if width != self.spec.head.embed_dim {
            return Err(Error::shape(format!(
                "embedding width {width} does not match instance head input {}",
                self.spec.head.embed_dim
            )));
        }
        let o = self.head_offset();
        let hidden = linear(tape, h, bound.var(o), bound.var(o + 1))?;
        let hidden = tape.relu(hidden);
        linear(tape, hidden, bound.var(o + 2), bound.var(o + 3))
    }

    pub fn centroid_var(&self, bound: &BoundParams) -> Var {
        bound.var(self.centroid_index())
    }

    /// Forward-only embedding of a whole matrix.
    pub fn embed(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let h = self.encode(&mut tape, &bound, xv)?;
        Ok(tape.value(h).clone())
    }

    /// Forward-only instance-head features of a whole matrix.
    pub fn instance_features(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let h = self.encode(&mut tape, &bound, xv)?;
        let z = self.project_instance(&mut tape, &bound, h)?;
        Ok(tape.value(z).clone())
    }
}

fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    tape.add_row_vector(y, bias)
}

/// Patch extraction for a 3×3/stride-2/pad-1 convolution over a batch of
/// `n` channel-last images: one output row per (image, output pixel).
fn im2col_map(n: usize, (h, w, c): (usize, usize, usize)) -> GatherMap {
    let (ho, wo) = (conv_out(h), conv_out(w));
    let patch = CONV_KERNEL * CONV_KERNEL * c;
    let mut src = Vec::with_capacity(n * ho * wo * patch);
    for img in 0..n {
        let base = img * h * w * c;
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..CONV_KERNEL {
                    for kx in 0..CONV_KERNEL {
                        let iy = (oy * CONV_STRIDE + ky) as isize - CONV_PAD as isize;
                        let ix = (ox * CONV_STRIDE + kx) as isize - CONV_PAD as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        for ch in 0..c {
                            src.push(inside.then(|| base + (iy as usize * w + ix as usize) * c + ch));
                        }
                    }
                }
            }
        }
    }
    GatherMap {
        rows: n * ho * wo,
        cols: patch,
        src,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::check_gradients;

    fn mlp_spec(widths: Vec<usize>, hidden: usize, out: usize, k: usize) -> ModelSpec {
        let embed = *widths.last().unwrap();
        ModelSpec {
            encoder: EncoderKind::Mlp(EncoderSpec::new(widths).unwrap()),
            head: InstanceHeadSpec {
                embed_dim: embed,
                hidden_dim: hidden,
                out_dim: out,
            },
            clusters: k,
        }
    }

    fn random_batch(rng: &mut Rng, n: usize, d: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, d, |_, _| rng.uniform_range(-2.0, 2.0))
    }

    #[test]
    fn spec_validation() {
        assert!(EncoderSpec::new(vec![4]).is_err());
        assert!(EncoderSpec::new(vec![4, 0, 2]).is_err());
        let mut spec = mlp_spec(vec![4, 3], 3, 2, 2);
        spec.clusters = 1;
        assert!(spec.validate().is_err());
        spec.clusters = 2;
        spec.head.embed_dim = 5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let mut model = Model::new(mlp_spec(vec![3, 5, 4], 4, 2, 2), &mut Rng::new(1)).unwrap();
        for p in model.params.iter_mut() {
            p.value = p.value.map(|_| 0.0);
        }
        let x = random_batch(&mut Rng::new(2), 6, 3);
        let h = model.embed(&x).unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
        let z = model.instance_features(&x).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layers_pass_input_through() {
        let mut model = Model::new(mlp_spec(vec![3, 3], 3, 3, 2), &mut Rng::new(1)).unwrap();
        for name in ["encoder.0.weight", "instance.0.weight", "instance.1.weight"] {
            model.params.by_name_mut(name).unwrap().value = DenseMatrix::identity(3);
        }
        let x = DenseMatrix::from_rows(&[[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]]).unwrap();
        assert_eq!(model.embed(&x).unwrap(), x);

        let h = x.map(f64::abs);
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let z = model.project_instance(&mut tape, &bound, hv).unwrap();
        assert_eq!(tape.value(z), &h);
    }

    /// Straight-line forward pass written with explicit loops.
    fn reference_forward(model: &Model, x: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let dense = |input: &Vec<f64>, w: &DenseMatrix, b: &DenseMatrix, relu: bool| {
            let mut out = vec![0.0; w.cols()];
            for (j, o) in out.iter_mut().enumerate() {
                let mut s = b.get(0, j);
                for (i, xi) in input.iter().enumerate() {
                    s += xi * w.get(i, j);
                }
                *o = if relu { s.max(0.0) } else { s };
            }
            out
        };
        let p = |name: &str| &model.params.by_name(name).unwrap().value;
        let mut hs = Vec::new();
        let mut zs = Vec::new();
        for r in x.row_iter() {
            let a = dense(&r.to_vec(), p("encoder.0.weight"), p("encoder.0.bias"), true);
            let h = dense(&a, p("encoder.1.weight"), p("encoder.1.bias"), false);
            let u = dense(&h, p("instance.0.weight"), p("instance.0.bias"), true);
            let z = dense(&u, p("instance.1.weight"), p("instance.1.bias"), false);
            hs.push(h);
            zs.push(z);
        }
        (DenseMatrix::from_rows(&hs).unwrap(), DenseMatrix::from_rows(&zs).unwrap())
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let mut rng = Rng::new(77);
        let mut model = Model::new(mlp_spec(vec![5, 7, 4], 6, 3, 3), &mut rng).unwrap();
        for p in model.params.iter_mut() {
            let (r, c) = p.value.shape();
            p.value = DenseMatrix::from_fn(r, c, |_, _| rng.uniform_range(-1.0, 1.0));
        }
        let x = random_batch(&mut rng, 9, 5);
        let (h_ref, z_ref) = reference_forward(&model, &x);
        let h = model.embed(&x).unwrap();
        let z = model.instance_features(&x).unwrap();
        for (a, b) in h.as_slice().iter().zip(h_ref.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in z.as_slice().iter().zip(z_ref.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(model.embed(&x).unwrap(), h, "deterministic");
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let model = Model::new(mlp_spec(vec![5, 4], 4, 2, 2), &mut Rng::new(0)).unwrap();
        assert!(matches!(model.embed(&DenseMatrix::zeros(2, 4)), Err(Error::Shape(_))));
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, false);
        let h = tape.constant(DenseMatrix::zeros(2, 3));
        assert!(matches!(model.project_instance(&mut tape, &bound, h), Err(Error::Shape(_))));
    }

    fn conv_spec() -> ModelSpec {
        ModelSpec {
            encoder: EncoderKind::Conv(ConvEncoderSpec {
                height: 5,
                width: 4,
                channels: 2,
                conv_channels: [3, 2],
                embed_dim: 4,
            }),
            head: InstanceHeadSpec::default_for(4),
            clusters: 2,
        }
    }

    /// Direct nested-loop convolution used to cross-check the gather-based layer.
    fn reference_conv(input: &[f64], (h, w, c): (usize, usize, usize), weight: &DenseMatrix, bias: &DenseMatrix) -> Vec<f64> {
        let (ho, wo, co) = (conv_out(h), conv_out(w), weight.cols());
        let mut out = vec![0.0; ho * wo * co];
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..co {
                    let mut s = bias.get(0, o);
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                continue;
                            }
                            for ch in 0..c {
                                let x = input[(iy as usize * w + ix as usize) * c + ch];
                                s += x * weight.get((ky * 3 + kx) * c + ch, o);
                            }
                        }
                    }
                    out[(oy * wo + ox) * co + o] = s.max(0.0);
                }
            }
        }
        out
    }

    #[test]
    fn conv_encoder_matches_direct_convolution() {
        let mut rng = Rng::new(5);
        let model = Model::new(conv_spec(), &mut rng).unwrap();
        let EncoderKind::Conv(cs) = &model.spec.encoder else { unreachable!() };
        let geo = cs.geometry();
        let x = DenseMatrix::from_fn(3, cs.input_dim(), |_, _| rng.uniform());
        let h = model.embed(&x).unwrap();
        let p = |name: &str| &model.params.by_name(name).unwrap().value;
        for (r, row) in x.row_iter().enumerate() {
            let a = reference_conv(row, geo[0], p("encoder.conv0.weight"), p("encoder.conv0.bias"));
            let b = reference_conv(&a, geo[1], p("encoder.conv1.weight"), p("encoder.conv1.bias"));
            let fc = DenseMatrix::new(1, b.len(), b).unwrap().matmul(p("encoder.fc.weight")).unwrap();
            for j in 0..cs.embed_dim {
                let expected = fc.get(0, j) + p("encoder.fc.bias").get(0, j);
                assert!((h.get(r, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_through_both_heads_match_finite_differences() {
        for spec in [mlp_spec(vec![4, 6, 3], 5, 3, 2), conv_spec()] {
            let mut rng = Rng::new(19);
            let model = Model::new(spec, &mut rng).unwrap();
            let x = random_batch(&mut rng, 4, model.spec.input_dim());
            let values: Vec<DenseMatrix> = model.params.iter().map(|p| p.value.clone()).collect();
            let readout = DenseMatrix::from_fn(4, model.spec.head.out_dim, |_, _| rng.uniform_range(-1.0, 1.0));
            let report = check_gradients(
                &values,
                |tape, vars| {
                    let mut m = model.clone();
                    for (p, v) in m.params.iter_mut().zip(vars) {
                        p.value = tape.value(*v).clone();
                    }
                    let bound = BoundParams::from_vars(vars.to_vec());
                    let xv = tape.constant(x.clone());
                    let h = m.encode(tape, &bound, xv)?;
                    let z = m.project_instance(tape, &bound, h)?;
                    let c = m.centroid_var(&bound);
                    let d = tape.squared_distances(h, c)?;
                    let w = tape.constant(readout.clone());
                    let zw = tape.mul(z, w)?;
                    let a = tape.sum(zw);
                    let b = tape.mean(d);
                    tape.add(a, b)
                },
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }
}
