//! Minimal reverse-mode automatic differentiation over scalars.
//!
//! Operations are recorded on a flat tape of nodes holding local partials;
//! [`Tape::backward`] sweeps the tape once in reverse to accumulate adjoints.
//! The Gumbel-Softmax selection is a fused multi-output node that
//! backpropagates through the analytic Jacobian
//! `dy_i/dl_j = y_i (delta_ij - y_j) / tau`.

#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub u32);

#[derive(Debug, Clone)]
enum Node {
    Leaf,
    Unary {
        p: u32,
        d: f64,
    },
    Binary {
        p0: u32,
        p1: u32,
        d0: f64,
        d1: f64,
    },
    /// Output `index` of the softmax group `group`.
    SoftmaxOut {
        group: u32,
        index: u32,
    },
}

#[derive(Debug, Clone)]
struct SoftmaxGroup {
    parents: Vec<u32>,
    y: Vec<f64>,
    tau: f64,
}

/// Recording tape.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    groups: Vec<SoftmaxGroup>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.0 as usize]
    }

    fn push(&mut self, node: Node, val: f64) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.vals.push(val);
        Var(id)
    }

    /// New independent variable.
    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(Node::Leaf, value)
    }

    /// Constant: a leaf nobody differentiates against.
    pub fn constant(&mut self, value: f64) -> Var {
        self.leaf(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(
            Node::Binary {
                p0: a.0,
                p1: b.0,
                d0: 1.0,
                d1: 1.0,
            },
            v,
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(
            Node::Binary {
                p0: a.0,
                p1: b.0,
                d0: 1.0,
                d1: -1.0,
            },
            v,
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(
            Node::Binary {
                p0: a.0,
                p1: b.0,
                d0: vb,
                d1: va,
            },
            va * vb,
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(
            Node::Binary {
                p0: a.0,
                p1: b.0,
                d0: 1.0 / vb,
                d1: -va / (vb * vb),
            },
            va / vb,
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(Node::Unary { p: a.0, d: -1.0 }, v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(Node::Unary { p: a.0, d: v }, v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let va = self.value(a);
        self.push(
            Node::Unary {
                p: a.0,
                d: 1.0 / va,
            },
            va.ln(),
        )
    }

    /// `a * c` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Node::Unary { p: a.0, d: c }, v)
    }

    /// `a + c` for a constant `c`.
    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(Node::Unary { p: a.0, d: 1.0 }, v)
    }

    /// `a^c` for a constant exponent.
    pub fn powf_const(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let v = va.powf(c);
        self.push(
            Node::Unary {
                p: a.0,
                d: c * va.powf(c - 1.0),
            },
            v,
        )
    }

    /// Numerically-stable sigmoid.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        self.push(
            Node::Unary {
                p: a.0,
                d: s * (1.0 - s),
            },
            s,
        )
    }

    /// Sum of a slice of variables.
    pub fn sum(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let mut acc = vars[0];
        for v in &vars[1..] {
            acc = self.add(acc, *v);
        }
        acc
    }

    /// Fused Gumbel-Softmax node: `y_i = softmax((l_i + g_i) / tau)` with the
    /// analytic Jacobian on the backward path. `noise` entries are treated as
    /// constants (reparameterization), so zero noise is the deterministic
    /// test hook.
    pub fn gumbel_softmax(&mut self, logits: &[Var], noise: &[f64], tau: f64) -> Vec<Var> {
        assert_eq!(logits.len(), noise.len());
        assert!(tau > 0.0);
        let shifted: Vec<f64> = logits
            .iter()
            .zip(noise)
            .map(|(l, g)| (self.value(*l) + g) / tau)
            .collect();
        // Max-subtraction for numerical stability; softmax is shift-invariant
        // so treating the shift as constant leaves the Jacobian exact.
        let m = shifted.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = shifted.iter().map(|s| (s - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let y: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let group = self.groups.len() as u32;
        self.groups.push(SoftmaxGroup {
            parents: logits.iter().map(|v| v.0).collect(),
            y: y.clone(),
            tau,
        });
        y.iter()
            .enumerate()
            .map(|(i, &yi)| {
                self.push(
                    Node::SoftmaxOut {
                        group,
                        index: i as u32,
                    },
                    yi,
                )
            })
            .collect()
    }

    /// Plain softmax over tape variables (temperature 1, no noise).
    pub fn softmax(&mut self, logits: &[Var]) -> Vec<Var> {
        let zeros = vec![0.0; logits.len()];
        self.gumbel_softmax(logits, &zeros, 1.0)
    }

    /// Reverse sweep from `root`; returns one adjoint per node.
    pub fn backward(&self, root: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.nodes.len()];
        adj[root.0 as usize] = 1.0;
        for id in (0..self.nodes.len()).rev() {
            let a = adj[id];
            if a == 0.0 {
                continue;
            }
            match &self.nodes[id] {
                Node::Leaf => {}
                Node::Unary { p, d } => adj[*p as usize] += a * d,
                Node::Binary { p0, p1, d0, d1 } => {
                    adj[*p0 as usize] += a * d0;
                    adj[*p1 as usize] += a * d1;
                }
                Node::SoftmaxOut { group, index } => {
                    let g = &self.groups[*group as usize];
                    let i = *index as usize;
                    let yi = g.y[i];
                    for (j, &pj) in g.parents.iter().enumerate() {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        adj[pj as usize] += a * yi * (delta - g.y[j]) / g.tau;
                    }
                }
            }
        }
        adj
    }
}

/// Convenience accessor into a [`Tape::backward`] result.
pub fn grad_of(adjoints: &[f64], v: Var) -> f64 {
    adjoints[v.0 as usize]
}
