use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm1d, Linear};
use crate::error::{invalid, AsifError, Result};
use crate::rng::{streams, RngStream};
use crate::scalar::Scalar;
use crate::tensor::{BnState, ParamId, ParamStore, Tape, Tensor, Var};

/// Architecture of an [`AsifModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden widths of the extractor; the last entry is the feature width.
    pub extractor_widths: Vec<usize>,
    pub num_classes: usize,
    /// Identities per observed class. `None` builds a plain classifier.
    pub identity_counts: Option<Vec<usize>>,
    pub id_hidden1: usize,
    pub id_hidden2: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        self.extractor_widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(invalid("model", "input_dim and num_classes must be positive"));
        }
        if self.extractor_widths.is_empty() || self.extractor_widths.contains(&0) {
            return Err(invalid("extractor_widths", "need at least one positive width"));
        }
        if let Some(counts) = &self.identity_counts {
            if counts.len() != self.num_classes {
                return Err(invalid(
                    "identity_counts",
                    format!("{} counts for {} classes", counts.len(), self.num_classes),
                ));
            }
            if self.id_hidden1 == 0 || self.id_hidden2 == 0 {
                return Err(invalid("identifier", "hidden widths must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout", format!("{} outside [0,1)", self.dropout)));
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(invalid("batchnorm", "eps must be > 0 and momentum in (0,1]"));
        }
        Ok(())
    }
}

/// Stack of `linear -> batchnorm -> relu` blocks.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    pub blocks: Vec<(Linear, BatchNorm1d<T>)>,
}

impl<T: Scalar> FeatureExtractor<T> {
    fn forward(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, training: bool) -> Result<Var> {
        let mut h = x;
        for (lin, bn) in &mut self.blocks {
            h = lin.forward(tape, store, h)?;
            h = bn.forward(tape, store, h, training)?;
            h = tape.relu(h);
        }
        Ok(h)
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().map_or(0, |(l, _)| l.output)
    }
}

#[derive(Clone, Debug)]
pub struct PrivateHead<T> {
    pub bn: BatchNorm1d<T>,
    pub linear: Linear,
}

/// Per-class sample identifier: a shared trunk, then reversal, then one
/// private head per class.
#[derive(Clone, Debug)]
pub struct IdentifierModule<T> {
    pub fc1: Linear,
    pub bn: BatchNorm1d<T>,
    pub fc2: Linear,
    pub heads: Vec<PrivateHead<T>>,
    pub identity_counts: Vec<usize>,
}

impl<T: Scalar> IdentifierModule<T> {
    pub fn trunk_params(&self) -> Vec<ParamId> {
        let mut v = self.fc1.params().to_vec();
        v.extend(self.bn.params());
        v.extend(self.fc2.params());
        v
    }

    pub fn head_params(&self, c: usize) -> Vec<ParamId> {
        let h = &self.heads[c];
        let mut v = h.bn.params().to_vec();
        v.extend(h.linear.params());
        v
    }
}

/// Identifier output for the rows of one observed class.
#[derive(Clone, Debug)]
pub struct IdentityBranch {
    /// Batch rows routed to this head.
    pub rows: Vec<usize>,
    /// Within-class identity index of each routed row.
    pub targets: Vec<usize>,
    /// `[B_c, N_c]` logits.
    pub logits: Var,
}

pub struct ForwardOutput {
    pub features: Var,
    pub class_logits: Var,
    pub identity: BTreeMap<usize, IdentityBranch>,
}

/// Feature extractor, linear class head and optional identifier.
#[derive(Clone, Debug)]
pub struct AsifModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub extractor: FeatureExtractor<T>,
    pub classifier: Linear,
    pub identifier: Option<IdentifierModule<T>>,
}

impl<T: Scalar> AsifModel<T> {
    /// Each component initialises from its own stream of `seed`, so a plain
    /// classifier and an ASIF model with the same seed share extractor and
    /// class head weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let eps = T::lit(config.bn_eps);
        let mom = T::lit(config.bn_momentum);
        let mut params = ParamStore::new();
        let mut rng = RngStream::derive(seed, streams::INIT_EXTRACTOR);
        let mut blocks = Vec::new();
        let mut width = config.input_dim;
        for (i, &w) in config.extractor_widths.iter().enumerate() {
            let lin = Linear::new(&mut params, &format!("extractor.{i}.linear"), width, w, &mut rng);
            let bn = BatchNorm1d::new(&mut params, &format!("extractor.{i}.bn"), w, eps, mom);
            blocks.push((lin, bn));
            width = w;
        }
        let mut rng = RngStream::derive(seed, streams::INIT_CLASSIFIER);
        let classifier = Linear::new(&mut params, "classifier", width, config.num_classes, &mut rng);
        let identifier = config.identity_counts.as_ref().map(|counts| {
            let mut rng = RngStream::derive(seed, streams::INIT_IDENTIFIER);
            let fc1 = Linear::new(&mut params, "identifier.fc1", width, config.id_hidden1, &mut rng);
            let bn = BatchNorm1d::new(&mut params, "identifier.bn", config.id_hidden1, eps, mom);
            let fc2 = Linear::new(
                &mut params,
                "identifier.fc2",
                config.id_hidden1,
                config.id_hidden2,
                &mut rng,
            );
            let heads = counts
                .iter()
                .enumerate()
                .map(|(c, &n)| PrivateHead {
                    bn: BatchNorm1d::new(
                        &mut params,
                        &format!("identifier.head{c}.bn"),
                        config.id_hidden2,
                        eps,
                        mom,
                    ),
                    linear: Linear::new(
                        &mut params,
                        &format!("identifier.head{c}.linear"),
                        config.id_hidden2,
                        n.max(1),
                        &mut rng,
                    ),
                })
                .collect();
            IdentifierModule {
                fc1,
                bn,
                fc2,
                heads,
                identity_counts: counts.clone(),
            }
        });
        Ok(Self {
            config,
            params,
            extractor: FeatureExtractor { blocks },
            classifier,
            identifier,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    /// Parameters of the extractor and class head.
    pub fn backbone_params(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self
            .extractor
            .blocks
            .iter()
            .flat_map(|(l, b)| l.params().into_iter().chain(b.params()))
            .collect();
        v.extend(self.classifier.params());
        v
    }

    pub fn extractor_params(&self) -> Vec<ParamId> {
        self.extractor
            .blocks
            .iter()
            .flat_map(|(l, b)| l.params().into_iter().chain(b.params()))
            .collect()
    }

    /// Records a full forward pass on `tape`.
    ///
    /// Identity logits for class `c` are computed only over the rows whose
    /// observed label is `c`, routed trunk -> reversal(`reversal[c]`) ->
    /// private head `c`. Dropout draws come from `rng`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        inputs: &Tensor<T>,
        observed: &[usize],
        identity: &[usize],
        training: bool,
        reversal: &[T],
        rng: &mut RngStream,
    ) -> Result<ForwardOutput> {
        let (b, d) = inputs.dims2()?;
        if d != self.config.input_dim {
            return Err(invalid(
                "inputs",
                format!("{d} features, model expects {}", self.config.input_dim),
            ));
        }
        let x = tape.constant(inputs.clone());
        let features = self.extractor.forward(tape, &self.params, x, training)?;
        let class_logits = self.classifier.forward(tape, &self.params, features)?;
        let mut branches = BTreeMap::new();
        if let Some(idm) = &mut self.identifier {
            if observed.len() != b || identity.len() != b {
                return Err(invalid(
                    "labels",
                    format!("{b} rows, {} labels, {} identities", observed.len(), identity.len()),
                ));
            }
            if reversal.len() != self.config.num_classes {
                return Err(invalid(
                    "reversal",
                    format!(
                        "{} coefficients for {} classes",
                        reversal.len(),
                        self.config.num_classes
                    ),
                ));
            }
            let mut rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (r, (&c, &idx)) in observed.iter().zip(identity).enumerate() {
                if c >= self.config.num_classes {
                    return Err(AsifError::IndexOutOfRange {
                        what: "observed label",
                        index: c,
                        limit: self.config.num_classes,
                    });
                }
                if idx >= idm.identity_counts[c] {
                    return Err(AsifError::IndexOutOfRange {
                        what: "identity index",
                        index: idx,
                        limit: idm.identity_counts[c],
                    });
                }
                rows.entry(c).or_default().push(r);
            }
            let mut h = idm.fc1.forward(tape, &self.params, features)?;
            h = idm.bn.forward(tape, &self.params, h, training)?;
            h = tape.relu(h);
            h = tape.dropout(h, self.config.dropout, training, rng)?;
            let trunk = idm.fc2.forward(tape, &self.params, h)?;
            for (c, rs) in rows {
                let head = &mut idm.heads[c];
                let g = tape.gather_rows(trunk, &rs)?;
                let g = tape.gradient_reversal(g, reversal[c]);
                let g = head.bn.forward(tape, &self.params, g, training)?;
                let g = tape.relu(g);
                let g = tape.dropout(g, self.config.dropout, training, rng)?;
                let logits = head.linear.forward(tape, &self.params, g)?;
                let targets = rs.iter().map(|&r| identity[r]).collect();
                branches.insert(
                    c,
                    IdentityBranch {
                        rows: rs,
                        targets,
                        logits,
                    },
                );
            }
        }
        Ok(ForwardOutput {
            features,
            class_logits,
            identity: branches,
        })
    }

    /// Eval-mode features and class logits, without identifier work.
    pub fn infer(&mut self, inputs: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let f = self.extractor.forward(&mut tape, &self.params, x, false)?;
        let l = self.classifier.forward(&mut tape, &self.params, f)?;
        Ok((tape.value(f).clone(), tape.value(l).clone()))
    }

    /// Batch-norm running statistics in a fixed order: extractor blocks,
    /// identifier trunk, then private heads by class.
    pub fn bn_states(&self) -> Vec<&BnState<T>> {
        let mut v: Vec<&BnState<T>> = self.extractor.blocks.iter().map(|(_, b)| &b.state).collect();
        if let Some(idm) = &self.identifier {
            v.push(&idm.bn.state);
            v.extend(idm.heads.iter().map(|h| &h.bn.state));
        }
        v
    }

    pub fn bn_states_mut(&mut self) -> Vec<&mut BnState<T>> {
        let mut v: Vec<&mut BnState<T>> = self.extractor.blocks.iter_mut().map(|(_, b)| &mut b.state).collect();
        if let Some(idm) = &mut self.identifier {
            v.push(&mut idm.bn.state);
            v.extend(idm.heads.iter_mut().map(|h| &mut h.bn.state));
        }
        v
    }

    pub fn predict(&mut self, inputs: &Tensor<T>) -> Result<Vec<usize>> {
        self.infer(inputs)?.1.argmax_rows()
    }
}
