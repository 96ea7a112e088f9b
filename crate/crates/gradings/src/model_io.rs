//! Versioned on-disk container for trained models.
//!
//! One line-oriented text format covers flow, GMM, and LOF models: a magic
//! header, `field <name> <value>` lines, and `tensor <name> <rows> <cols>`
//! lines each followed by the tensor's entries as hexadecimal f64 bit
//! patterns. The bit-level encoding makes a load/save round trip reproduce
//! scores exactly.

use crate::autodiff::{Activation, DenseLayer, MadeNetwork, Mlp, Tensor};
use crate::baselines::{CovarianceType, GmmModel, LofIndex, RdVariant};
use crate::error::{Error, Result};
use crate::flows::{CouplingLayer, FlowElement, FlowModel, MafLayer};
use crate::pipeline::AnomalyScorer;
use crate::trajectory::StandardizerStats;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

const MAGIC: &str = "gradings-model v1";

/// A fitted model of any supported kind.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Flow(FlowModel),
    Gmm(GmmModel),
    Lof(LofIndex),
}

impl FittedModel {
    pub fn scorer(&self) -> &dyn AnomalyScorer {
        match self {
            FittedModel::Flow(m) => m,
            FittedModel::Gmm(m) => m,
            FittedModel::Lof(m) => m,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            FittedModel::Flow(_) => "flow",
            FittedModel::Gmm(_) => "gmm",
            FittedModel::Lof(_) => "lof",
        }
    }

    pub fn dim(&self) -> usize {
        self.scorer().dim()
    }
}

/// A model plus everything needed to score raw segments: the window length
/// it was trained for and the training-split standardizer.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub window: usize,
    pub stats: StandardizerStats,
    pub model: FittedModel,
}

struct Writer {
    out: String,
}

impl Writer {
    fn new() -> Self {
        Self {
            out: format!("{MAGIC}\n"),
        }
    }

    fn field(&mut self, name: &str, value: impl std::fmt::Display) {
        debug_assert!(!name.contains(' '));
        writeln!(self.out, "field {name} {value}").expect("string write");
    }

    fn tensor(&mut self, name: &str, t: &Tensor) {
        writeln!(self.out, "tensor {name} {} {}", t.rows(), t.cols()).expect("string write");
        let mut line = String::with_capacity(t.len() * 17);
        for (i, v) in t.data().iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{:016x}", v.to_bits()).expect("string write");
        }
        self.out.push_str(&line);
        self.out.push('\n');
    }

    fn vector(&mut self, name: &str, values: &[f64]) {
        self.tensor(name, &Tensor::row(values));
    }
}

struct Reader {
    fields: BTreeMap<String, String>,
    tensors: BTreeMap<String, Tensor>,
}

impl Reader {
    fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim() == MAGIC => {}
            _ => {
                return Err(Error::ModelFormat(format!(
                    "missing `{MAGIC}` header"
                )))
            }
        }
        let mut fields = BTreeMap::new();
        let mut tensors = BTreeMap::new();
        while let Some((idx, line)) = lines.next() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ' ');
            let directive = parts.next().unwrap_or_default();
            let rest = parts.next().unwrap_or_default();
            match directive {
                "field" => {
                    let (name, value) = rest.split_once(' ').ok_or_else(|| {
                        Error::ModelFormat(format!("line {}: field without value", idx + 1))
                    })?;
                    fields.insert(name.to_string(), value.to_string());
                }
                "tensor" => {
                    let mut header = rest.split_whitespace();
                    let name = header
                        .next()
                        .ok_or_else(|| Error::ModelFormat(format!("line {}: unnamed tensor", idx + 1)))?;
                    let rows: usize = header
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::ModelFormat(format!("line {}: bad tensor rows", idx + 1)))?;
                    let cols: usize = header
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::ModelFormat(format!("line {}: bad tensor cols", idx + 1)))?;
                    let (data_idx, data_line) = lines.next().ok_or_else(|| {
                        Error::ModelFormat(format!("line {}: tensor `{name}` missing data", idx + 1))
                    })?;
                    let mut data = Vec::with_capacity(rows * cols);
                    for word in data_line.split_whitespace() {
                        let bits = u64::from_str_radix(word, 16).map_err(|e| {
                            Error::ModelFormat(format!("line {}: bad hex `{word}`: {e}", data_idx + 1))
                        })?;
                        data.push(f64::from_bits(bits));
                    }
                    if data.len() != rows * cols {
                        return Err(Error::ModelFormat(format!(
                            "tensor `{name}`: expected {} entries, found {}",
                            rows * cols,
                            data.len()
                        )));
                    }
                    tensors.insert(name.to_string(), Tensor::from_vec(rows, cols, data));
                }
                other => {
                    return Err(Error::ModelFormat(format!(
                        "line {}: unknown directive `{other}`",
                        idx + 1
                    )))
                }
            }
        }
        Ok(Self { fields, tensors })
    }

    fn field(&self, name: &str) -> Result<&str> {
        self.fields
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::ModelFormat(format!("missing field `{name}`")))
    }

    fn parse_field<T: FromStr>(&self, name: &str) -> Result<T> {
        self.field(name)?
            .trim()
            .parse()
            .map_err(|_| Error::ModelFormat(format!("unparseable field `{name}`")))
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::ModelFormat(format!("missing tensor `{name}`")))
    }
}

fn usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::ModelFormat(format!("bad integer list `{s}`")))
        })
        .collect()
}

fn join_usize(values: impl IntoIterator<Item = usize>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn write_mlp(w: &mut Writer, prefix: &str, mlp: &Mlp) {
    w.field(&format!("{prefix}.layers"), mlp.layers.len());
    for (j, layer) in mlp.layers.iter().enumerate() {
        w.tensor(&format!("{prefix}.w{j}"), &layer.weights);
        w.tensor(&format!("{prefix}.b{j}"), &layer.bias);
    }
    if let Some(b) = &mlp.bound {
        w.tensor(&format!("{prefix}.bound"), b);
    }
}

fn read_mlp(r: &Reader, prefix: &str, bounded: bool) -> Result<Mlp> {
    let n: usize = r.parse_field(&format!("{prefix}.layers"))?;
    let mut layers = Vec::with_capacity(n);
    for j in 0..n {
        layers.push(DenseLayer {
            weights: r.tensor(&format!("{prefix}.w{j}"))?.clone(),
            bias: r.tensor(&format!("{prefix}.b{j}"))?.clone(),
            activation: if j + 1 == n { Activation::Identity } else { Activation::Tanh },
        });
    }
    let bound = if bounded {
        Some(r.tensor(&format!("{prefix}.bound"))?.clone())
    } else {
        None
    };
    Ok(Mlp { layers, bound })
}

/// Serializes a bundle to the container text format.
pub fn to_text(bundle: &ModelBundle) -> String {
    let mut w = Writer::new();
    w.field("kind", bundle.model.kind_name());
    w.field("window", bundle.window);
    w.vector("standardizer.mean", &bundle.stats.mean);
    w.vector("standardizer.stddev", &bundle.stats.stddev);

    match &bundle.model {
        FittedModel::Flow(flow) => {
            w.field("flow.dim", flow.dim());
            w.field("flow.elements", flow.elements().len());
            for (i, el) in flow.elements().iter().enumerate() {
                match el {
                    FlowElement::Reverse => w.field(&format!("el{i}.type"), "reverse"),
                    FlowElement::Coupling(c) => {
                        w.field(&format!("el{i}.type"), "coupling");
                        w.field(&format!("el{i}.split"), c.split);
                        write_mlp(&mut w, &format!("el{i}.s"), &c.scale_net);
                        write_mlp(&mut w, &format!("el{i}.t"), &c.translate_net);
                    }
                    FlowElement::Maf(m) => {
                        w.field(&format!("el{i}.type"), "maf");
                        w.field(&format!("el{i}.order"), join_usize(m.order.iter().copied()));
                        w.field(&format!("el{i}.layers"), m.made.layers.len());
                        for (j, layer) in m.made.layers.iter().enumerate() {
                            w.tensor(&format!("el{i}.w{j}"), &layer.weights);
                            w.tensor(&format!("el{i}.b{j}"), &layer.bias);
                        }
                        w.tensor(&format!("el{i}.bound"), &m.made.alpha_bound);
                    }
                }
            }
        }
        FittedModel::Gmm(gmm) => {
            w.field("gmm.k", gmm.num_components());
            w.field("gmm.cov_type", gmm.cov_type());
            w.vector("gmm.weights", gmm.weights());
            for (k, mean) in gmm.means().iter().enumerate() {
                w.vector(&format!("gmm.mean{k}"), mean);
            }
            let dim = gmm.dim();
            for (k, cov) in gmm.covariances().iter().enumerate() {
                let t = match gmm.cov_type() {
                    CovarianceType::Diagonal => Tensor::row(cov),
                    CovarianceType::Full => Tensor::from_vec(dim, dim, cov.clone()),
                };
                w.tensor(&format!("gmm.cov{k}"), &t);
            }
        }
        FittedModel::Lof(lof) => {
            w.field("lof.k_values", join_usize(lof.k_values()));
            w.field("lof.variant", lof.variant());
            let dim = lof.dim();
            let mut data = Vec::with_capacity(lof.len() * dim);
            for p in lof.points() {
                data.extend_from_slice(p);
            }
            w.tensor("lof.points", &Tensor::from_vec(lof.len(), dim, data));
        }
    }
    w.out
}

/// Parses a container produced by [`to_text`].
pub fn from_text(text: &str) -> Result<ModelBundle> {
    let r = Reader::parse(text)?;
    let window: usize = r.parse_field("window")?;
    let stats = StandardizerStats {
        mean: r.tensor("standardizer.mean")?.data().to_vec(),
        stddev: r.tensor("standardizer.stddev")?.data().to_vec(),
    };

    let model = match r.field("kind")? {
        "flow" => {
            let dim: usize = r.parse_field("flow.dim")?;
            let count: usize = r.parse_field("flow.elements")?;
            let mut elements = Vec::with_capacity(count);
            for i in 0..count {
                let el = match r.field(&format!("el{i}.type"))? {
                    "reverse" => FlowElement::Reverse,
                    "coupling" => {
                        let split: usize = r.parse_field(&format!("el{i}.split"))?;
                        FlowElement::Coupling(CouplingLayer {
                            dim,
                            split,
                            scale_net: read_mlp(&r, &format!("el{i}.s"), true)?,
                            translate_net: read_mlp(&r, &format!("el{i}.t"), false)?,
                        })
                    }
                    "maf" => {
                        let order = usize_list(r.field(&format!("el{i}.order"))?)?;
                        let n: usize = r.parse_field(&format!("el{i}.layers"))?;
                        let mut layers = Vec::with_capacity(n);
                        for j in 0..n {
                            layers.push(DenseLayer {
                                weights: r.tensor(&format!("el{i}.w{j}"))?.clone(),
                                bias: r.tensor(&format!("el{i}.b{j}"))?.clone(),
                                activation: if j + 1 == n {
                                    Activation::Identity
                                } else {
                                    Activation::Tanh
                                },
                            });
                        }
                        let bound = r.tensor(&format!("el{i}.bound"))?.clone();
                        FlowElement::Maf(MafLayer {
                            made: MadeNetwork::from_params(dim, &order, layers, bound)?,
                            order,
                        })
                    }
                    other => {
                        return Err(Error::ModelFormat(format!("unknown element type `{other}`")))
                    }
                };
                elements.push(el);
            }
            FittedModel::Flow(FlowModel::from_elements(dim, elements))
        }
        "gmm" => {
            let k: usize = r.parse_field("gmm.k")?;
            let cov_type: CovarianceType = r.parse_field("gmm.cov_type")?;
            let weights = r.tensor("gmm.weights")?.data().to_vec();
            let mut means = Vec::with_capacity(k);
            let mut covs = Vec::with_capacity(k);
            for i in 0..k {
                means.push(r.tensor(&format!("gmm.mean{i}"))?.data().to_vec());
                covs.push(r.tensor(&format!("gmm.cov{i}"))?.data().to_vec());
            }
            FittedModel::Gmm(GmmModel::from_parameters(weights, means, cov_type, covs)?)
        }
        "lof" => {
            let k_values = usize_list(r.field("lof.k_values")?)?;
            let variant: RdVariant = r.parse_field("lof.variant")?;
            let t = r.tensor("lof.points")?;
            let points: Vec<Vec<f64>> = (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect();
            FittedModel::Lof(LofIndex::build(points, &k_values, variant)?)
        }
        other => return Err(Error::ModelFormat(format!("unknown model kind `{other}`"))),
    };

    if stats.mean.len() != model.dim() {
        return Err(Error::ModelFormat(format!(
            "standardizer dimension {} != model dimension {}",
            stats.mean.len(),
            model.dim()
        )));
    }
    Ok(ModelBundle {
        window,
        stats,
        model,
    })
}

pub fn save_model(path: &Path, bundle: &ModelBundle) -> Result<()> {
    std::fs::write(path, to_text(bundle))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path)?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::gmm_fit_em;
    use crate::flows::{FlowConfig, FlowKind};
    use crate::trajectory::FeatureVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(dim: usize) -> StandardizerStats {
        StandardizerStats {
            mean: (0..dim).map(|i| i as f64 * 0.1).collect(),
            stddev: (0..dim).map(|i| 1.0 + i as f64 * 0.01).collect(),
        }
    }

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn flow_round_trip_reproduces_log_prob_bit_for_bit() {
        for kind in [FlowKind::Maf, FlowKind::RealNvp] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let cfg = FlowConfig {
                kind,
                dim: 6,
                num_flows: 3,
                hidden: vec![8, 8],
            };
            let mut model = FlowModel::new(&cfg, &mut rng).unwrap();
            for p in model.params_mut() {
                for v in p.data_mut() {
                    *v += rng.gen_range(-0.2..0.2);
                }
            }
            let bundle = ModelBundle {
                window: 6 / 4 + 1,
                stats: stats(6),
                model: FittedModel::Flow(model.clone()),
            };
            let text = to_text(&bundle);
            let loaded = from_text(&text).unwrap();
            let FittedModel::Flow(back) = &loaded.model else {
                panic!("kind changed");
            };
            for x in random_vectors(25, 6, 7) {
                let a = model.log_prob(&x).unwrap();
                let b = back.log_prob(&x).unwrap();
                assert_eq!(a.to_bits(), b.to_bits(), "{kind} log_prob drifted");
            }
            assert_eq!(loaded.stats, bundle.stats);
            assert_eq!(loaded.window, bundle.window);
        }
    }

    #[test]
    fn gmm_round_trip_is_exact() {
        for cov_type in [CovarianceType::Diagonal, CovarianceType::Full] {
            let data: Vec<FeatureVector> = random_vectors(120, 3, 5)
                .into_iter()
                .map(|values| FeatureVector { values })
                .collect();
            let fit = gmm_fit_em(&data, 3, cov_type, 2).unwrap();
            let bundle = ModelBundle {
                window: 1,
                stats: stats(3),
                model: FittedModel::Gmm(fit.model.clone()),
            };
            let loaded = from_text(&to_text(&bundle)).unwrap();
            let FittedModel::Gmm(back) = &loaded.model else {
                panic!("kind changed")
            };
            for x in random_vectors(20, 3, 11) {
                assert_eq!(
                    fit.model.log_density(&x).to_bits(),
                    back.log_density(&x).to_bits()
                );
            }
        }
    }

    #[test]
    fn lof_round_trip_is_exact() {
        let points = random_vectors(80, 4, 9);
        let index = LofIndex::build(points, &[5, 10], RdVariant::Standard).unwrap();
        let bundle = ModelBundle {
            window: 1,
            stats: stats(4),
            model: FittedModel::Lof(index.clone()),
        };
        let loaded = from_text(&to_text(&bundle)).unwrap();
        let FittedModel::Lof(back) = &loaded.model else {
            panic!("kind changed")
        };
        for x in random_vectors(20, 4, 13) {
            assert_eq!(index.score(&x).unwrap().to_bits(), back.score(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn malformed_containers_are_rejected() {
        assert!(matches!(from_text("nonsense"), Err(Error::ModelFormat(_))));
        let missing = format!("{MAGIC}\nfield kind flow\n");
        assert!(matches!(from_text(&missing), Err(Error::ModelFormat(_))));
        let bad_directive = format!("{MAGIC}\nbogus x y\n");
        assert!(matches!(from_text(&bad_directive), Err(Error::ModelFormat(_))));
    }
}
