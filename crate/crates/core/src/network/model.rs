//! The denoiser: parameters, construction and the forward pass.

use std::sync::Arc;

use super::config::ModelConfig;
use super::params::ParamStore;
use super::trace::{DepOp, DepProgram, ForwardTrace, LayerRecord};
use crate::autodiff::{
    add, batch_norm_infer, batch_norm_train, concat_channels, conv2d, leaky_relu, BatchStats, RunningStats, Tape,
    Var, LEAKY_SLOPE,
};
use crate::dataset::derive_seed;
use crate::error::{Error, Result};
use crate::graph_builder::{build_graph, GraphMode, PixelGraph};
use crate::graph_conv::{graph_conv_layer, init_ecc, Aggregation, EccShape, EccVars, DEFAULT_CHUNK_PIXELS};
use crate::image::GrayImage;
use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// Kernel sizes of the three preprocessing branches.
pub const BRANCH_KERNELS: [usize; 3] = [3, 5, 7];

/// Which graph construction the forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphRegime {
    /// All pairwise distances within each patch.
    Train,
    /// Search window of the given width.
    Infer { window: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise by batch statistics (and report them).
    Batch,
    /// Normalise by stored running statistics.
    Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub graphs: GraphRegime,
    pub bn: BnMode,
    /// Pixels per chunk of the non-local aggregation.
    pub chunk_pixels: usize,
    /// Keep every intermediate feature map.
    pub trace: bool,
}

impl ForwardOptions {
    pub fn train() -> Self {
        ForwardOptions {
            graphs: GraphRegime::Train,
            bn: BnMode::Batch,
            chunk_pixels: DEFAULT_CHUNK_PIXELS,
            trace: false,
        }
    }

    pub fn infer(window: usize) -> Self {
        ForwardOptions {
            graphs: GraphRegime::Infer { window },
            bn: BnMode::Running,
            chunk_pixels: DEFAULT_CHUNK_PIXELS,
            trace: false,
        }
    }

    pub fn traced(mut self) -> Self {
        self.trace = true;
        self
    }
}

pub struct ForwardOutput<T: Real> {
    /// Denoised map `[B, H, W, 1]`.
    pub output: Var<T>,
    /// Batch statistics per batch-norm layer (batch mode only).
    pub bn_stats: Vec<(String, BatchStats<T>)>,
    pub trace: Option<ForwardTrace<T>>,
    /// Dependency structure (always produced).
    pub program: DepProgram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    pub(crate) config: ModelConfig,
    pub(crate) params: ParamStore<T>,
    /// Batch-norm running statistics (`<layer>.bn.running_mean`/`_var`).
    pub(crate) running: ParamStore<T>,
}

fn glorot_conv<T: Real>(k: usize, cin: usize, cout: usize, seed: u64) -> Tensor<T> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let var = 2.0 / ((k * k * cin) + (k * k * cout)) as f64;
    let dist = Normal::new(0.0, var.sqrt()).expect("finite variance");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[k, k, cin, cout], |_| lit(dist.sample(&mut rng)))
}

pub(crate) const ECC_FIELDS: [&str; 10] = ["w0", "b0", "wl", "bl", "wr", "br", "wk", "bk", "local", "bias"];

/// Layer shapes of the graph convolutions, by name.
pub fn graph_layers(c: &ModelConfig) -> Vec<(String, EccShape)> {
    let mk = |fin, fout, agg| EccShape {
        aggregation: agg,
        ..EccShape::new(fin, fout, c.rank, c.shifts, c.delta)
    };
    let mut out = Vec::new();
    for k in BRANCH_KERNELS {
        out.push((format!("pre.k{k}.gconv"), mk(c.branch_features, c.branch_features, c.aggregation)));
    }
    for block in block_names(c) {
        for i in 1..=3 {
            out.push((format!("{block}.gconv{i}"), mk(c.features, c.features, c.aggregation)));
        }
    }
    // widths differ, so the output layer always uses the full aggregation
    out.push(("out.gconv".into(), mk(c.features, 1, Aggregation::Ecc)));
    out
}

/// `hpf`, `lpf1`, …, `lpfN`.
pub fn block_names(c: &ModelConfig) -> Vec<String> {
    std::iter::once("hpf".to_string())
        .chain((1..=c.lpf_blocks).map(|i| format!("lpf{i}")))
        .collect()
}

/// Build and initialise a model; deterministic under `seed`.
pub fn build_network<T: Real>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let c = config;
    let mut params = ParamStore::new();
    let mut running = ParamStore::new();
    let mut counter = 0u64;
    let mut next_seed = || {
        counter += 1;
        derive_seed(seed, counter)
    };
    let bn = |params: &mut ParamStore<T>, running: &mut ParamStore<T>, name: &str, ch: usize| -> Result<()> {
        params.insert(format!("{name}.bn.gamma"), Tensor::full(&[ch], T::one()))?;
        params.insert(format!("{name}.bn.beta"), Tensor::zeros(&[ch]))?;
        let s = RunningStats::<T>::new(ch);
        running.insert(format!("{name}.bn.running_mean"), s.mean)?;
        running.insert(format!("{name}.bn.running_var"), s.var)?;
        Ok(())
    };
    let gshapes: std::collections::HashMap<String, EccShape> = graph_layers(c).into_iter().collect();
    let gconv = |params: &mut ParamStore<T>, name: &str, seed: u64| -> Result<()> {
        let p = init_ecc::<T>(gshapes[name], seed)?;
        let tensors = [p.w0, p.b0, p.wl, p.bl, p.wr, p.br, p.wk, p.bk, p.local, p.bias];
        for (field, t) in ECC_FIELDS.iter().zip(tensors) {
            params.insert(format!("{name}.{field}"), t)?;
        }
        Ok(())
    };
    let b = c.branch_features;
    for k in BRANCH_KERNELS {
        for i in 1..=3 {
            let name = format!("pre.k{k}.conv{i}");
            let cin = if i == 1 { 1 } else { b };
            params.insert(format!("{name}.kernel"), glorot_conv(k, cin, b, next_seed()))?;
            bn(&mut params, &mut running, &name, b)?;
        }
        let name = format!("pre.k{k}.gconv");
        gconv(&mut params, &name, next_seed())?;
        bn(&mut params, &mut running, &name, b)?;
    }
    for block in block_names(c) {
        let name = format!("{block}.conv");
        params.insert(format!("{name}.kernel"), glorot_conv(3, c.features, c.features, next_seed()))?;
        bn(&mut params, &mut running, &name, c.features)?;
        for i in 1..=3 {
            let name = format!("{block}.gconv{i}");
            gconv(&mut params, &name, next_seed())?;
            bn(&mut params, &mut running, &name, c.features)?;
        }
    }
    gconv(&mut params, "out.gconv", next_seed())?;
    Ok(Model {
        config: config.clone(),
        params,
        running,
    })
}

struct Feat<T: Real> {
    v: Var<T>,
    node: usize,
}

struct Fwd<'a, T: Real> {
    model: &'a Model<T>,
    tape: &'a Tape<T>,
    params: &'a [Var<T>],
    opts: ForwardOptions,
    stats: Vec<(String, BatchStats<T>)>,
    records: Vec<LayerRecord<T>>,
    program: DepProgram,
    slope: T,
}

impl<'a, T: Real> Fwd<'a, T> {
    fn p(&self, name: &str) -> Result<Var<T>> {
        self.model
            .params
            .position(name)
            .map(|i| self.params[i].clone())
            .ok_or_else(|| Error::invalid(format!("model has no parameter {name}")))
    }

    fn record(&mut self, name: &str, f: &Feat<T>, graphs: Option<&Arc<Vec<PixelGraph>>>) {
        if self.opts.trace {
            self.records.push(LayerRecord {
                name: name.to_string(),
                features: f.v.value().clone(),
                graphs: graphs.cloned(),
                node: f.node,
            });
        }
    }

    fn bn_act(&mut self, name: &str, x: Var<T>) -> Result<Var<T>> {
        let gamma = self.p(&format!("{name}.bn.gamma"))?;
        let beta = self.p(&format!("{name}.bn.beta"))?;
        let y = match self.opts.bn {
            BnMode::Batch => {
                let (y, stats) = batch_norm_train(self.tape, &x, &gamma, &beta)?;
                self.stats.push((name.to_string(), stats));
                y
            }
            BnMode::Running => {
                let stats = RunningStats {
                    mean: self.model.running.get(&format!("{name}.bn.running_mean"))?.clone(),
                    var: self.model.running.get(&format!("{name}.bn.running_var"))?.clone(),
                };
                batch_norm_infer(self.tape, &x, &gamma, &beta, &stats)?
            }
        };
        leaky_relu(self.tape, &y, self.slope)
    }

    fn conv_bn(&mut self, name: &str, x: &Feat<T>) -> Result<Feat<T>> {
        let kernel = self.p(&format!("{name}.kernel"))?;
        let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
        let y = conv2d(self.tape, &x.v, &kernel, None)?;
        let y = self.bn_act(name, y)?;
        let node = self.program.push(
            name,
            DepOp::Local {
                input: x.node,
                ry: kh / 2,
                rx: kw / 2,
            },
        );
        let f = Feat { v: y, node };
        self.record(name, &f, None);
        Ok(f)
    }

    fn graphs(&self, x: &Feat<T>) -> Result<Arc<Vec<PixelGraph>>> {
        let mode = match self.opts.graphs {
            GraphRegime::Train => GraphMode::Train,
            GraphRegime::Infer { window } => GraphMode::Infer { window },
        };
        Ok(Arc::new(build_graph(x.v.value(), self.model.config.knn, mode)?))
    }

    fn gconv(&mut self, name: &str, x: &Feat<T>, graphs: &Arc<Vec<PixelGraph>>, bn: bool) -> Result<Feat<T>> {
        let shape = graph_layers(&self.model.config)
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::invalid(format!("unknown graph layer {name}")))?;
        let f = |field: &str| self.p(&format!("{name}.{field}"));
        let vars = EccVars {
            w0: f("w0")?,
            b0: f("b0")?,
            wl: f("wl")?,
            bl: f("bl")?,
            wr: f("wr")?,
            br: f("br")?,
            wk: f("wk")?,
            bk: f("bk")?,
            local: f("local")?,
            bias: f("bias")?,
        };
        let mut y = graph_conv_layer(self.tape, &x.v, graphs, &shape, &vars, self.opts.chunk_pixels)?;
        if bn {
            y = self.bn_act(name, y)?;
        }
        let node = self.program.push(
            name,
            DepOp::Graph {
                input: x.node,
                graphs: graphs.clone(),
            },
        );
        let out = Feat { v: y, node };
        self.record(name, &out, Some(graphs));
        Ok(out)
    }

    fn block(&mut self, name: &str, x: &Feat<T>, residual: bool) -> Result<Feat<T>> {
        let c = self.conv_bn(&format!("{name}.conv"), x)?;
        let graphs = self.graphs(&c)?;
        let mut h = c;
        for i in 1..=3 {
            h = self.gconv(&format!("{name}.gconv{i}"), &h, &graphs, true)?;
        }
        let out = if residual {
            let v = add(self.tape, &x.v, &h.v)?;
            let node = self.program.push(name, DepOp::Union(vec![x.node, h.node]));
            Feat { v, node }
        } else {
            let node = self.program.push(name, DepOp::Union(vec![h.node]));
            Feat { v: h.v, node }
        };
        self.record(name, &out, None);
        Ok(out)
    }
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running(&self) -> &ParamStore<T> {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.running
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            running: self.running.cast(),
        }
    }

    /// Register every parameter as a tape leaf, in store order.
    pub fn bind(&self, tape: &Tape<T>) -> Vec<Var<T>> {
        self.params.iter().map(|(_, t)| tape.leaf(t.clone())).collect()
    }

    /// Forward pass with freshly bound parameters.
    pub fn forward(&self, tape: &Tape<T>, noisy: &Var<T>, opts: ForwardOptions) -> Result<(ForwardOutput<T>, Vec<Var<T>>)> {
        let vars = self.bind(tape);
        let out = self.forward_with(tape, noisy, &vars, opts)?;
        Ok((out, vars))
    }

    /// Forward pass with caller-provided parameter variables (aligned with
    /// [`Model::params`]).
    pub fn forward_with(&self, tape: &Tape<T>, noisy: &Var<T>, params: &[Var<T>], opts: ForwardOptions) -> Result<ForwardOutput<T>> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "{} parameter variables for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        let d = noisy.value().map_dims()?;
        if d.channels != 1 {
            return Err(Error::shape(format!("expected grayscale input, got {} channels", d.channels)));
        }
        if d.height < 3 || d.width < 3 {
            return Err(Error::invalid(format!(
                "image {}×{} is smaller than 3×3",
                d.height, d.width
            )));
        }
        let mut f = Fwd {
            model: self,
            tape,
            params,
            opts,
            stats: Vec::new(),
            records: Vec::new(),
            program: DepProgram::new(d.height, d.width),
            slope: lit(LEAKY_SLOPE),
        };
        let input = Feat { v: noisy.clone(), node: 0 };
        f.record("input", &input, None);
        let mut branches = Vec::new();
        let mut nodes = Vec::new();
        for k in BRANCH_KERNELS {
            let mut h = f.conv_bn(&format!("pre.k{k}.conv1"), &input)?;
            for i in 2..=3 {
                h = f.conv_bn(&format!("pre.k{k}.conv{i}"), &h)?;
            }
            let graphs = f.graphs(&h)?;
            let h = f.gconv(&format!("pre.k{k}.gconv"), &h, &graphs, true)?;
            nodes.push(h.node);
            branches.push(h.v);
        }
        let v = concat_channels(tape, &branches)?;
        let node = f.program.push("pre", DepOp::Union(nodes));
        let mut h = Feat { v, node };
        f.record("pre", &h, None);
        for (i, block) in block_names(&self.config).iter().enumerate() {
            h = f.block(block, &h, i > 0)?;
        }
        let graphs = f.graphs(&h)?;
        let residual = f.gconv("out.gconv", &h, &graphs, false)?;
        let v = add(tape, noisy, &residual.v)?;
        let node = f.program.push("output", DepOp::Union(vec![0, residual.node]));
        let out = Feat { v, node };
        f.record("output", &out, None);
        let trace = opts.trace.then(|| ForwardTrace {
            records: std::mem::take(&mut f.records),
            program: f.program.clone(),
        });
        Ok(ForwardOutput {
            output: out.v,
            bn_stats: f.stats,
            trace,
            program: f.program,
        })
    }

    /// Fold batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<T>)], momentum: f64) -> Result<()> {
        for (name, s) in stats {
            let mut rs = RunningStats {
                mean: self.running.get(&format!("{name}.bn.running_mean"))?.clone(),
                var: self.running.get(&format!("{name}.bn.running_var"))?.clone(),
            };
            rs.update(s, momentum);
            *self.running.get_mut(&format!("{name}.bn.running_mean"))? = rs.mean;
            *self.running.get_mut(&format!("{name}.bn.running_var"))? = rs.var;
        }
        Ok(())
    }

    /// Inference on a single image (search-window graphs, running BN).
    pub fn denoise(&self, noisy: &GrayImage, chunk_pixels: usize) -> Result<GrayImage> {
        let tape = Tape::no_grad();
        let x = tape.constant(noisy.to_tensor());
        let mut opts = ForwardOptions::infer(self.config.window);
        opts.chunk_pixels = chunk_pixels;
        let (out, _) = self.forward(&tape, &x, opts)?;
        GrayImage::from_tensor(out.output.value(), 0)
    }

    /// Traced inference forward pass on one image.
    pub fn trace(&self, img: &GrayImage) -> Result<ForwardTrace<T>> {
        let tape = Tape::no_grad();
        let x = tape.constant(img.to_tensor());
        let (out, _) = self.forward(&tape, &x, ForwardOptions::infer(self.config.window).traced())?;
        Ok(out.trace.expect("traced forward"))
    }

    /// Set every tensor of the named layers to zero (BN scale included).
    pub fn zero_layers(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}
