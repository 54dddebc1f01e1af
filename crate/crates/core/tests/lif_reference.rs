//! Independent vanilla-LIF reference implementation (scalar loops, no
//! shared code with the production forward/backward) used to pin down the
//! mode-reduction behavior: a network with the refractory machinery
//! disabled must reproduce plain LIF bit-exactly, and its gradients must
//! agree with a straight BPTT over the LIF graph.

use hdrp_core::network::{ForwardMode, LayerSpec, Network, NetworkSpec, ParamStore};
use hdrp_core::neuron::{NeuronParams, RefractoryMode, SpikeActivation};
use hdrp_core::train::{backward_batch, softmax_cross_entropy, BackwardConfig};
use hdrp_core::{Rng, Tensor};

/// Plain-vector MLP weights extracted from a ParamStore.
struct RefNet {
    weights: Vec<Vec<Vec<f64>>>, // [layer][out][in]
    biases: Vec<Vec<f64>>,       // [layer][out]
    tau_m: f64,
    u_th: f64,
    u_rest: f64,
    gamma: f64,
    t_steps: usize,
}

struct RefTrace {
    // [layer][t][neuron]
    h: Vec<Vec<Vec<f64>>>,
    s: Vec<Vec<Vec<f64>>>,
    u: Vec<Vec<Vec<f64>>>,
    // [t][class]
    logits_acc: Vec<f64>,
}

impl RefNet {
    fn hidden_layers(&self) -> usize {
        self.weights.len() - 1
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, RefTrace) {
        let lh = self.hidden_layers();
        let classes = self.biases[lh].len();
        let mut h = vec![Vec::new(); lh];
        let mut s = vec![Vec::new(); lh];
        let mut u_hist = vec![Vec::new(); lh];
        let mut u: Vec<Vec<f64>> = (0..lh)
            .map(|l| vec![self.u_rest; self.biases[l].len()])
            .collect();
        let mut acc = vec![0.0; classes];
        for _t in 0..self.t_steps {
            let mut act: Vec<f64> = x.to_vec();
            for l in 0..lh {
                let n_out = self.biases[l].len();
                let mut h_t = vec![0.0; n_out];
                let mut s_t = vec![0.0; n_out];
                let mut u_t = vec![0.0; n_out];
                for i in 0..n_out {
                    let mut drive = self.biases[l][i];
                    for (j, &a) in act.iter().enumerate() {
                        drive += self.weights[l][i][j] * a;
                    }
                    let u_prime = -(u[l][i] - self.u_rest) / self.tau_m + drive;
                    let hh = u[l][i] + u_prime;
                    let ss = if hh >= self.u_th { 1.0 } else { 0.0 };
                    h_t[i] = hh;
                    s_t[i] = ss;
                    u_t[i] = hh * (1.0 - ss) + self.u_rest * ss;
                }
                act = s_t.clone();
                h[l].push(h_t);
                s[l].push(s_t);
                u_hist[l].push(u_t.clone());
                u[l] = u_t;
            }
            for c in 0..classes {
                let mut z = self.biases[lh][c];
                for (j, &a) in act.iter().enumerate() {
                    z += self.weights[lh][c][j] * a;
                }
                acc[c] += z;
            }
        }
        let logits: Vec<f64> = acc.iter().map(|a| a / self.t_steps as f64).collect();
        (
            logits,
            RefTrace {
                h,
                s,
                u: u_hist,
                logits_acc: acc,
            },
        )
    }

    /// BPTT over the LIF graph for one sample given d loss / d logits.
    fn backward(
        &self,
        x: &[f64],
        trace: &RefTrace,
        dlogits: &[f64],
    ) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let lh = self.hidden_layers();
        let mut dw: Vec<Vec<Vec<f64>>> = self
            .weights
            .iter()
            .map(|wl| wl.iter().map(|r| vec![0.0; r.len()]).collect())
            .collect();
        let mut db: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let inv_t = 1.0 / self.t_steps as f64;
        let classes = dlogits.len();
        let surr = |hh: f64| (self.gamma - (hh - self.u_th).abs()).max(0.0) / (self.gamma * self.gamma);

        // carried membrane adjoints per hidden layer
        let mut d_u: Vec<Vec<f64>> = (0..lh).map(|l| vec![0.0; self.biases[l].len()]).collect();
        let _ = &trace.logits_acc;
        for t in (0..self.t_steps).rev() {
            // readout at step t
            let top = &trace.s[lh - 1][t];
            let mut d_act = vec![0.0; top.len()];
            for c in 0..classes {
                let g = dlogits[c] * inv_t;
                db[lh][c] += g;
                for j in 0..top.len() {
                    dw[lh][c][j] += g * top[j];
                    d_act[j] += g * self.weights[lh][c][j];
                }
            }
            // hidden layers, top to bottom
            for l in (0..lh).rev() {
                let n_out = self.biases[l].len();
                let input: Vec<f64> = if l == 0 {
                    x.to_vec()
                } else {
                    trace.s[l - 1][t].clone()
                };
                let mut d_input = vec![0.0; input.len()];
                for i in 0..n_out {
                    let hh = trace.h[l][t][i];
                    let ss = trace.s[l][t][i];
                    let d_spike = d_act[i] + d_u[l][i] * (self.u_rest - hh);
                    let d_h = d_spike * surr(hh) + d_u[l][i] * (1.0 - ss);
                    let d_uprime = d_h;
                    let d_drive = d_uprime;
                    d_u[l][i] = d_h - d_uprime / self.tau_m;
                    db[l][i] += d_drive;
                    for j in 0..input.len() {
                        dw[l][i][j] += d_drive * input[j];
                        d_input[j] += d_drive * self.weights[l][i][j];
                    }
                }
                d_act = d_input;
            }
            let _ = &trace.u;
        }
        (dw, db)
    }
}

fn extract(net_store: &ParamStore, params: &NeuronParams, gamma: f64, t: usize) -> RefNet {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for lp in net_store.params.iter().flatten() {
        let [out, inp] = lp.weight.shape()[..] else {
            panic!("reference supports dense layers only")
        };
        let mut rows = Vec::with_capacity(out);
        for i in 0..out {
            rows.push(lp.weight.data()[i * inp..(i + 1) * inp].to_vec());
        }
        weights.push(rows);
        biases.push(lp.bias.data().to_vec());
    }
    RefNet {
        weights,
        biases,
        tau_m: params.tau_m,
        u_th: params.u_th,
        u_rest: params.u_rest,
        gamma,
        t_steps: t,
    }
}

fn build(mode: RefractoryMode, neuron: NeuronParams, seed: u64) -> (Network, ParamStore) {
    let spec = NetworkSpec {
        layers: vec![
            LayerSpec::Encoder { shape: vec![5] },
            LayerSpec::Dense {
                out: 9,
                neuron,
                mode,
            },
            LayerSpec::Dense {
                out: 7,
                neuron,
                mode,
            },
            LayerSpec::Readout { classes: 3 },
        ],
        timesteps: 4,
        seed,
    };
    Network::build(&spec, &mut Rng::new(seed)).unwrap()
}

fn check_against_reference(mode: RefractoryMode, neuron: NeuronParams, seed: u64) {
    let gamma = 1.0;
    let (net, mut store) = build(mode, neuron, seed);
    let reference = extract(&store, &neuron, gamma, 4);

    let mut rng = Rng::new(seed + 1);
    let inputs: Vec<Tensor> = (0..6)
        .map(|_| Tensor::uniform(&mut rng, &[5], 0.0, 1.0))
        .collect();
    let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();

    // forward must agree bit-exactly
    let (logits, traces, _) = net
        .forward_batch(&store, &inputs, ForwardMode::Training, SpikeActivation::Hard)
        .unwrap();
    for (i, x) in inputs.iter().enumerate() {
        let (ref_logits, _) = reference.forward(x.data());
        for c in 0..3 {
            assert_eq!(
                logits.at(i * 3 + c),
                ref_logits[c],
                "sample {i} class {c} logits diverge"
            );
        }
    }

    // gradients must agree to 1e-10
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
    store.zero_grads();
    backward_batch(
        &net,
        &mut store,
        &traces,
        &dlogits,
        &BackwardConfig {
            gamma,
            detach_normalization: false,
        },
    )
    .unwrap();

    let mut ref_dw: Vec<Vec<Vec<f64>>> = reference
        .weights
        .iter()
        .map(|wl| wl.iter().map(|r| vec![0.0; r.len()]).collect())
        .collect();
    let mut ref_db: Vec<Vec<f64>> = reference.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    for (i, x) in inputs.iter().enumerate() {
        let (_, trace) = reference.forward(x.data());
        let drow = &dlogits.data()[i * 3..(i + 1) * 3];
        let (dw, db) = reference.backward(x.data(), &trace, drow);
        for (acc, d) in ref_dw.iter_mut().zip(dw) {
            for (ar, dr) in acc.iter_mut().zip(d) {
                for (a, v) in ar.iter_mut().zip(dr) {
                    *a += v;
                }
            }
        }
        for (acc, d) in ref_db.iter_mut().zip(db) {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
    }

    let mut layer_idx = 0;
    for g in store.grads.iter().flatten() {
        let [out, inp] = g.weight.shape()[..] else { panic!() };
        for i in 0..out {
            for j in 0..inp {
                let a = g.weight.at(i * inp + j);
                let b = ref_dw[layer_idx][i][j];
                assert!(
                    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0),
                    "layer {layer_idx} w[{i}][{j}]: {a} vs {b}"
                );
            }
            let a = g.bias.at(i);
            let b = ref_db[layer_idx][i];
            assert!(
                (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0),
                "layer {layer_idx} b[{i}]: {a} vs {b}"
            );
        }
        assert_eq!(g.a_gain, 0.0, "no kernel-gain gradient in LIF reduction");
        layer_idx += 1;
    }
}

#[test]
fn mode_none_matches_reference_lif() {
    check_against_reference(RefractoryMode::None, NeuronParams::default(), 71);
    check_against_reference(RefractoryMode::None, NeuronParams::default(), 72);
}

#[test]
fn hdrp_with_zero_range_matches_reference_lif() {
    let neuron = NeuronParams {
        tau_ref0: 0.0,
        tau_refl: 0.0,
        ..NeuronParams::default()
    };
    check_against_reference(RefractoryMode::Hdrp, neuron, 73);
    check_against_reference(RefractoryMode::Hdrp, neuron, 74);
}
