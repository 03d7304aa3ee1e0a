//! Sequential context encoders: a bidirectional LSTM applied per modality
//! over the utterances of one dialogue, and a learned speaker embedding.

use rand::Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Gate order used throughout: input, forget, cell candidate, output.
const GATES: usize = 4;

/// Weights of one LSTM direction. Per gate: input weights `[d_h x d_in]`,
/// recurrent weights `[d_h x d_h]`, bias `[d_h]`.
#[derive(Debug, Clone)]
pub struct LstmDirectionParams {
    pub w: [Tensor; GATES],
    pub u: [Tensor; GATES],
    pub b: [Tensor; GATES],
}

/// Tape positions of one registered LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmDirectionIds {
    w: [NodeId; GATES],
    u: [NodeId; GATES],
    b: [NodeId; GATES],
}

/// Initialization scale for all encoder weight matrices; biases start at
/// zero.
const INIT_SIGMA: f64 = 0.1;

impl LstmDirectionParams {
    /// Gaussian weight init (sigma 0.1), zero biases.
    pub fn init<R: Rng>(d_in: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        let mk = |shape: Vec<usize>, rng: &mut R| -> Result<Tensor> {
            Ok(Tensor::gaussian(shape, INIT_SIGMA, rng)?.with_grad())
        };
        Ok(LstmDirectionParams {
            w: [
                mk(vec![d_h, d_in], rng)?,
                mk(vec![d_h, d_in], rng)?,
                mk(vec![d_h, d_in], rng)?,
                mk(vec![d_h, d_in], rng)?,
            ],
            u: [
                mk(vec![d_h, d_h], rng)?,
                mk(vec![d_h, d_h], rng)?,
                mk(vec![d_h, d_h], rng)?,
                mk(vec![d_h, d_h], rng)?,
            ],
            b: [
                Tensor::zeros(vec![d_h]).with_grad(),
                Tensor::zeros(vec![d_h]).with_grad(),
                Tensor::zeros(vec![d_h]).with_grad(),
                Tensor::zeros(vec![d_h]).with_grad(),
            ],
        })
    }

    pub fn d_hidden(&self) -> usize {
        self.b[0].numel()
    }

    pub fn register(&self, tape: &mut Tape) -> LstmDirectionIds {
        let reg = |ts: &[Tensor; GATES], tape: &mut Tape| -> [NodeId; GATES] {
            [
                tape.leaf(&ts[0]),
                tape.leaf(&ts[1]),
                tape.leaf(&ts[2]),
                tape.leaf(&ts[3]),
            ]
        };
        LstmDirectionIds {
            w: reg(&self.w, tape),
            u: reg(&self.u, tape),
            b: reg(&self.b, tape),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.w.iter().chain(self.u.iter()).chain(self.b.iter()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.w
            .iter_mut()
            .chain(self.u.iter_mut())
            .chain(self.b.iter_mut())
            .collect()
    }
}

/// Bidirectional wrapper; outputs per step are `[forward ; backward]`, so
/// the encoding dimension is `2 * d_h`.
#[derive(Debug, Clone)]
pub struct BiRnnParams {
    pub fwd: LstmDirectionParams,
    pub bwd: LstmDirectionParams,
}

#[derive(Debug, Clone, Copy)]
pub struct BiRnnIds {
    fwd: LstmDirectionIds,
    bwd: LstmDirectionIds,
}

impl BiRnnParams {
    pub fn init<R: Rng>(d_in: usize, d_h: usize, rng: &mut R) -> Result<Self> {
        Ok(BiRnnParams {
            fwd: LstmDirectionParams::init(d_in, d_h, rng)?,
            bwd: LstmDirectionParams::init(d_in, d_h, rng)?,
        })
    }

    pub fn d_out(&self) -> usize {
        2 * self.fwd.d_hidden()
    }

    pub fn register(&self, tape: &mut Tape) -> BiRnnIds {
        BiRnnIds {
            fwd: self.fwd.register(tape),
            bwd: self.bwd.register(tape),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.fwd.tensors();
        v.extend(self.bwd.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.fwd.tensors_mut();
        v.extend(self.bwd.tensors_mut());
        v
    }
}

fn lstm_step(
    tape: &mut Tape,
    ids: &LstmDirectionIds,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let pre = |tape: &mut Tape, gate: usize| -> Result<NodeId> {
        let wx = tape.matvec(ids.w[gate], x)?;
        let uh = tape.matvec(ids.u[gate], h)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, ids.b[gate])
    };
    let pi = pre(tape, 0)?;
    let pf = pre(tape, 1)?;
    let pg = pre(tape, 2)?;
    let po = pre(tape, 3)?;
    let i = tape.sigmoid(pi)?;
    let f = tape.sigmoid(pf)?;
    let g = tape.tanh(pg)?;
    let o = tape.sigmoid(po)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Run one direction over a sequence from zero initial state, returning the
/// hidden state at every step.
fn lstm_run(
    tape: &mut Tape,
    ids: &LstmDirectionIds,
    d_h: usize,
    xs: &[NodeId],
) -> Result<Vec<NodeId>> {
    let zero = Tensor::zeros(vec![d_h]);
    let mut h = tape.leaf(&zero);
    let mut c = tape.leaf(&zero);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let (h_next, c_next) = lstm_step(tape, ids, x, h, c)?;
        h = h_next;
        c = c_next;
        out.push(h);
    }
    Ok(out)
}

/// Encode a sequence bidirectionally: position `t` yields the forward hidden
/// state after reading `0..=t` concatenated with the backward hidden state
/// after reading `n-1..=t`.
pub fn birnn_encode(
    tape: &mut Tape,
    params: &BiRnnParams,
    ids: &BiRnnIds,
    xs: &[NodeId],
) -> Result<Vec<NodeId>> {
    if xs.is_empty() {
        return Err(Error::invalid("birnn_encode: empty sequence"));
    }
    let d_h = params.fwd.d_hidden();
    let hf = lstm_run(tape, &ids.fwd, d_h, xs)?;
    let xs_rev: Vec<NodeId> = xs.iter().rev().copied().collect();
    let hb = lstm_run(tape, &ids.bwd, d_h, &xs_rev)?;
    let n = xs.len();
    (0..n)
        .map(|t| tape.concat(&[hf[t], hb[n - 1 - t]]))
        .collect()
}

/// Speaker identity embedding: `W [d_s x n_speakers]` and bias `[d_s]`; a
/// speaker's vector is their column of `W` plus the bias.
#[derive(Debug, Clone)]
pub struct SpeakerEmbedParams {
    pub w: Tensor,
    pub b: Tensor,
    n_speakers: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SpeakerEmbedIds {
    w: NodeId,
    b: NodeId,
}

impl SpeakerEmbedParams {
    /// Gaussian weight init (sigma 0.1), zero bias.
    pub fn init<R: Rng>(d_s: usize, n_speakers: usize, rng: &mut R) -> Result<Self> {
        Ok(SpeakerEmbedParams {
            w: Tensor::gaussian(vec![d_s, n_speakers], INIT_SIGMA, rng)?.with_grad(),
            b: Tensor::zeros(vec![d_s]).with_grad(),
            n_speakers,
        })
    }

    pub fn n_speakers(&self) -> usize {
        self.n_speakers
    }

    pub fn register(&self, tape: &mut Tape) -> SpeakerEmbedIds {
        SpeakerEmbedIds {
            w: tape.leaf(&self.w),
            b: tape.leaf(&self.b),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Embed one speaker id as `W . onehot(speaker) + b`.
pub fn speaker_embed(
    tape: &mut Tape,
    params: &SpeakerEmbedParams,
    ids: &SpeakerEmbedIds,
    speaker: usize,
) -> Result<NodeId> {
    if speaker >= params.n_speakers {
        return Err(Error::invalid(format!(
            "speaker {speaker} out of range ({} slots)",
            params.n_speakers
        )));
    }
    let mut onehot = vec![0.0; params.n_speakers];
    onehot[speaker] = 1.0;
    let oh = tape.leaf(&Tensor::vector(onehot)?);
    let col = tape.matvec(ids.w, oh)?;
    tape.add(col, ids.b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_params(w: [f64; 4], u: [f64; 4], b: [f64; 4]) -> LstmDirectionParams {
        let t1 = |x: f64| Tensor::matrix(1, 1, vec![x]).unwrap().with_grad();
        let v1 = |x: f64| Tensor::vector(vec![x]).unwrap().with_grad();
        LstmDirectionParams {
            w: [t1(w[0]), t1(w[1]), t1(w[2]), t1(w[3])],
            u: [t1(u[0]), t1(u[1]), t1(u[2]), t1(u[3])],
            b: [v1(b[0]), v1(b[1]), v1(b[2]), v1(b[3])],
        }
    }

    #[test]
    fn scalar_recurrence_matches_hand_computation() {
        let w = [0.5, -0.3, 0.8, 0.2];
        let u = [0.1, 0.4, -0.6, 0.7];
        let b = [0.05, -0.1, 0.2, 0.0];
        let params = scalar_params(w, u, b);
        let xs_raw = [1.0, -0.5, 0.25, 2.0];

        // independent recurrence in plain f64 arithmetic
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (mut h, mut c) = (0.0, 0.0);
        let mut expect = Vec::new();
        for &x in &xs_raw {
            let i = sig(w[0] * x + u[0] * h + b[0]);
            let f = sig(w[1] * x + u[1] * h + b[1]);
            let g = (w[2] * x + u[2] * h + b[2]).tanh();
            let o = sig(w[3] * x + u[3] * h + b[3]);
            c = f * c + i * g;
            h = o * c.tanh();
            expect.push(h);
        }

        let mut tape = Tape::new();
        let ids = params.register(&mut tape);
        let xs: Vec<NodeId> = xs_raw
            .iter()
            .map(|&x| tape.leaf(&Tensor::vector(vec![x]).unwrap()))
            .collect();
        let hs = lstm_run(&mut tape, &ids, 1, &xs).unwrap();
        for (id, want) in hs.iter().zip(&expect) {
            assert!((tape.value(*id).item() - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn reversing_the_sequence_swaps_direction_halves() {
        // with tied directions the two halves are the same function, so
        // reversing the input must exchange them exactly
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one_dir = LstmDirectionParams::init(3, 2, &mut rng).unwrap();
        let params = BiRnnParams { fwd: one_dir.clone(), bwd: one_dir };
        let xs_raw: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        let encode = |order: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            let mut tape = Tape::new();
            let ids = params.register(&mut tape);
            let xs: Vec<NodeId> = order
                .iter()
                .map(|x| tape.leaf(&Tensor::vector(x.clone()).unwrap()))
                .collect();
            birnn_encode(&mut tape, &params, &ids, &xs)
                .unwrap()
                .iter()
                .map(|&id| tape.value(id).data().to_vec())
                .collect()
        };

        let fwd = encode(xs_raw.clone());
        let rev = encode(xs_raw.iter().rev().cloned().collect());
        let d_h = 2;
        let n = xs_raw.len();
        for t in 0..n {
            // forward half of the reversed encoding is the backward half of
            // the original at the mirrored position, and vice versa
            assert_eq!(rev[t][..d_h], fwd[n - 1 - t][d_h..]);
            assert_eq!(rev[t][d_h..], fwd[n - 1 - t][..d_h]);
        }
    }

    #[test]
    fn zero_weights_give_zero_encodings() {
        let zero_dir = || LstmDirectionParams {
            w: std::array::from_fn(|_| Tensor::zeros(vec![2, 3]).with_grad()),
            u: std::array::from_fn(|_| Tensor::zeros(vec![2, 2]).with_grad()),
            b: std::array::from_fn(|_| Tensor::zeros(vec![2]).with_grad()),
        };
        let params = BiRnnParams { fwd: zero_dir(), bwd: zero_dir() };
        let mut tape = Tape::new();
        let ids = params.register(&mut tape);
        let xs: Vec<NodeId> = (0..3)
            .map(|i| tape.leaf(&Tensor::vector(vec![i as f64, 1.0, -1.0]).unwrap()))
            .collect();
        let enc = birnn_encode(&mut tape, &params, &ids, &xs).unwrap();
        for id in enc {
            assert!(tape.value(id).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_utterance_dialogue_encodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = BiRnnParams::init(4, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let ids = params.register(&mut tape);
        let x = tape.leaf(&Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let enc = birnn_encode(&mut tape, &params, &ids, &[x]).unwrap();
        assert_eq!(enc.len(), 1);
        assert_eq!(tape.value(enc[0]).numel(), 6);
        assert!(birnn_encode(&mut tape, &params, &ids, &[]).is_err());
    }

    #[test]
    fn speaker_embedding_selects_a_column() {
        let params = SpeakerEmbedParams {
            w: Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
                .unwrap()
                .with_grad(),
            b: Tensor::vector(vec![0.5, -0.5]).unwrap().with_grad(),
            n_speakers: 3,
        };
        let mut tape = Tape::new();
        let ids = params.register(&mut tape);
        let lam = speaker_embed(&mut tape, &params, &ids, 1).unwrap();
        assert_eq!(tape.value(lam).data(), &[2.5, 4.5]);
        assert!(speaker_embed(&mut tape, &params, &ids, 3).is_err());
    }

    #[test]
    fn speaker_gradient_reaches_only_the_used_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = SpeakerEmbedParams::init(2, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let ids = params.register(&mut tape);
        let lam = speaker_embed(&mut tape, &params, &ids, 1).unwrap();
        let loss = tape.sum(lam).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gw = grads.get(ids.w).unwrap();
        for r in 0..2 {
            assert_eq!(gw.at(r, 0), 0.0);
            assert_eq!(gw.at(r, 1), 1.0);
            assert_eq!(gw.at(r, 2), 0.0);
        }
    }
}
