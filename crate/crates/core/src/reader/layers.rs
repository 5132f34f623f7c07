//! The individual layers of the reader, as operations on a [`Tape`].

use crate::autodiff::{Tape, VarId};
use indexmap::IndexMap;
use ndarray::ArrayView2;

use crate::corpus::PAD_ID;

/// Looks up character vectors for a token-by-character id grid. Rows of
/// the result follow the grid row-major, one row per character slot; PAD
/// slots come out as zero rows. Returns the keep mask alongside.
pub fn embed_chars(
    tape: &mut Tape,
    table: VarId,
    char_ids: &ArrayView2<u32>,
) -> (VarId, Vec<bool>) {
    let mut ids = Vec::with_capacity(char_ids.len());
    let mut keep = Vec::with_capacity(char_ids.len());
    for &id in char_ids.iter() {
        ids.push(id as usize);
        keep.push(id != PAD_ID);
    }
    (tape.embed_rows(table, ids, keep.clone()), keep)
}

/// 1D max pooling over each token's character vectors. Tokens whose
/// characters are all PAD (padding tokens) pool to zero rows.
pub fn pool_words(
    tape: &mut Tape,
    char_vecs: VarId,
    tokens: usize,
    chars_per_token: usize,
    keep: &[bool],
) -> VarId {
    tape.group_max_rows(char_vecs, tokens, chars_per_token, keep.to_vec())
}

/// Simple match attention: every row of `a` attends over the rows of `b`
/// scored by inner product, with a softmax over unmasked `b` positions.
pub fn sim_att(tape: &mut Tape, a: VarId, b: VarId, mask_b: &[bool]) -> VarId {
    let bt = tape.transpose(b);
    let scores = tape.matmul(a, bt);
    let alpha = tape.masked_softmax_rows(scores, mask_b);
    tape.matmul(alpha, b)
}

/// One bi-directional SRU layer: per direction the gates and projections
/// are computed from the inputs alone, then scanned along the row axis.
/// Forward and backward hidden states are concatenated per token.
pub fn bisru_layer(
    tape: &mut Tape,
    x: VarId,
    prefix: &str,
    d: usize,
    param_ids: &IndexMap<String, VarId>,
    mask: &[bool],
) -> VarId {
    let in_dim = tape.value(x).ncols();
    let mut halves = Vec::with_capacity(2);
    for dir in ["fwd", "bwd"] {
        let p = |name: &str| param_ids[&format!("{prefix}.{dir}.{name}")];
        let xt = tape.matmul(x, p("w"));
        let f_lin = tape.matmul(x, p("wf"));
        let f_aff = tape.add_row_vec(f_lin, p("bf"));
        let f = tape.sigmoid(f_aff);
        let r_lin = tape.matmul(x, p("wr"));
        let r_aff = tape.add_row_vec(r_lin, p("br"));
        let r = tape.sigmoid(r_aff);
        let hw = if in_dim == d { x } else { tape.matmul(x, p("wh")) };
        halves.push(tape.sru_scan(xt, f, r, hw, mask, dir == "bwd"));
    }
    tape.concat_cols(&halves)
}

/// Stacked bi-directional SRU encoder with dropout after each layer.
#[allow(clippy::too_many_arguments)]
pub fn sru_encode(
    tape: &mut Tape,
    mut x: VarId,
    scope: &str,
    layers: usize,
    d: usize,
    param_ids: &IndexMap<String, VarId>,
    mask: &[bool],
    drop: &mut super::DropCtx,
) -> VarId {
    for l in 0..layers {
        let prefix = format!("{scope}.l{l}");
        x = bisru_layer(tape, x, &prefix, d, param_ids, mask);
        x = drop.apply(tape, x);
    }
    x
}

/// Similarity matrix `S[i][j] = w_s . [rp_i ; rq_j ; rp_i * rq_j]` where
/// `w_s` is a single column of height three times the token width.
pub fn similarity_matrix(tape: &mut Tape, rp: VarId, rq: VarId, w_s: VarId, width: usize) -> VarId {
    let w1 = tape.slice_rows(w_s, 0, width);
    let w2 = tape.slice_rows(w_s, width, width);
    let w3 = tape.slice_rows(w_s, 2 * width, width);
    let p_part = tape.matmul(rp, w1); // [T,1]
    let q_part = tape.matmul(rq, w2); // [J,1]
    let w3_row = tape.transpose(w3);
    let rp_scaled = tape.mul_row_vec(rp, w3_row);
    let rq_t = tape.transpose(rq);
    let cross = tape.matmul(rp_scaled, rq_t); // [T,J]
    let q_row = tape.transpose(q_part);
    let with_q = tape.add_row_vec(cross, q_row);
    tape.add_col_vec(with_q, p_part)
}

/// Question merged attention: each passage row mixes question vectors by a
/// masked softmax over its similarity row.
pub fn question_merged(tape: &mut Tape, sim: VarId, rq: VarId, mask_q: &[bool]) -> VarId {
    let alpha = tape.masked_softmax_rows(sim, mask_q);
    tape.matmul(alpha, rq)
}

/// Passage merged attention: a single question-focused passage summary,
/// weighted by a softmax over per-row similarity maxima, tiled to every
/// passage row.
pub fn passage_merged(
    tape: &mut Tape,
    sim: VarId,
    rp: VarId,
    mask_q: &[bool],
    mask_p: &[bool],
) -> VarId {
    let t_len = tape.value(rp).nrows();
    let row_max = tape.max_cols_masked(sim, mask_q); // [T,1]
    let row_max_t = tape.transpose(row_max); // [1,T]
    let b = tape.masked_softmax_rows(row_max_t, mask_p); // [1,T]
    let summary = tape.matmul(b, rp); // [1,2d]
    tape.tile_rows(summary, t_len)
}

/// Self match attention: simple match attention of a sequence with itself.
pub fn self_match(tape: &mut Tape, u: VarId, mask_p: &[bool]) -> VarId {
    sim_att(tape, u, u, mask_p)
}

/// Pointer layer. Start logits are a linear map of the fused features;
/// the end pointer additionally sees each token's start probability.
/// Returns the two distributions as single-row matrices.
pub fn pointer(
    tape: &mut Tape,
    feats: VarId,
    w_ps: VarId,
    w_pe: VarId,
    mask_p: &[bool],
) -> (VarId, VarId) {
    let s_logits = tape.matmul(feats, w_ps); // [T,1]
    let s_row = tape.transpose(s_logits);
    let ps = tape.masked_softmax_rows(s_row, mask_p); // [1,T]
    let ps_col = tape.transpose(ps); // [T,1]
    let e_feats = tape.concat_cols(&[feats, ps_col]);
    let e_logits = tape.matmul(e_feats, w_pe);
    let e_row = tape.transpose(e_logits);
    let pe = tape.masked_softmax_rows(e_row, mask_p);
    (ps, pe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use ndarray::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rand_tensor(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn embed_pad_rows_are_zero_and_lookup_reflects_table() {
        let mut tape = Tape::new();
        let mut table = Tensor::zeros((4, 3));
        table.row_mut(2).fill(0.5);
        table.row_mut(3).fill(-1.0);
        let tid = tape.input(table.clone());
        let ids = array![[2u32, 3, 0], [2, 0, 0]];
        let (w, keep) = embed_chars(&mut tape, tid, &ids.view());
        let v = tape.value(w);
        assert_eq!(v.row(0).to_vec(), vec![0.5; 3]);
        assert_eq!(v.row(1).to_vec(), vec![-1.0; 3]);
        assert_eq!(v.row(2).to_vec(), vec![0.0; 3]); // PAD slot
        assert_eq!(v.row(0), v.row(3)); // same id, same vector
        assert_eq!(keep, vec![true, true, false, true, false, false]);

        // updating the table row shows up in a fresh lookup
        let mut tape2 = Tape::new();
        table.row_mut(2).fill(9.0);
        let tid2 = tape2.input(table);
        let (w2, _) = embed_chars(&mut tape2, tid2, &ids.view());
        assert_eq!(tape2.value(w2).row(0).to_vec(), vec![9.0; 3]);
    }

    #[test]
    fn pool_words_examples() {
        let mut tape = Tape::new();
        // one token, two characters with vectors [1,-2] and [0,3]
        let w = tape.input(Tensor::from_shape_vec((2, 2), vec![1., -2., 0., 3.]).unwrap());
        let e = pool_words(&mut tape, w, 1, 2, &[true, true]);
        assert_eq!(tape.value(e).row(0).to_vec(), vec![1.0, 3.0]);

        // single character token: the pooled vector is that character's
        let mut tape = Tape::new();
        let w = tape.input(Tensor::from_shape_vec((2, 2), vec![0.7, -0.3, 9., 9.]).unwrap());
        let e = pool_words(&mut tape, w, 1, 2, &[true, false]);
        assert_eq!(tape.value(e).row(0).to_vec(), vec![0.7, -0.3]);
    }

    #[test]
    fn pool_words_permutation_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let rows = rand_tensor(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let w = tape.input(rows.clone());
        let e = pool_words(&mut tape, w, 1, 3, &[true; 3]);
        let base = tape.value(e).clone();

        let mut permuted = Tensor::zeros((3, 4));
        permuted.row_mut(0).assign(&rows.row(2));
        permuted.row_mut(1).assign(&rows.row(0));
        permuted.row_mut(2).assign(&rows.row(1));
        let mut tape2 = Tape::new();
        let w2 = tape2.input(permuted);
        let e2 = pool_words(&mut tape2, w2, 1, 3, &[true; 3]);
        assert_eq!(tape2.value(e2), &base);
    }

    #[test]
    fn sim_att_singleton_and_uniform() {
        // M = 1: every output row equals the single b row
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_shape_vec((2, 2), vec![3., 1., -2., 0.5]).unwrap());
        let b = tape.input(Tensor::from_shape_vec((1, 2), vec![0.4, -0.6]).unwrap());
        let out = sim_att(&mut tape, a, b, &[true]);
        for i in 0..2 {
            assert_eq!(tape.value(out).row(i).to_vec(), vec![0.4, -0.6]);
        }

        // a row orthogonal to all equal-norm b rows: uniform average
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_shape_vec((1, 3), vec![0., 0., 1.]).unwrap());
        let b = tape.input(
            Tensor::from_shape_vec((2, 3), vec![1., 0., 0., 0., 1., 0.]).unwrap(),
        );
        let out = sim_att(&mut tape, a, b, &[true, true]);
        let row = tape.value(out).row(0).to_vec();
        assert!((row[0] - 0.5).abs() < 1e-12);
        assert!((row[1] - 0.5).abs() < 1e-12);
        assert!(row[2].abs() < 1e-12);
    }

    #[test]
    fn sim_att_two_by_two_softmax_oracle() {
        // scores [1, 0] give weights [e/(e+1), 1/(e+1)] = [0.7311, 0.2689]
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_shape_vec((1, 2), vec![1., 0.]).unwrap());
        let b = tape.input(Tensor::from_shape_vec((2, 2), vec![1., 0., 0., 1.]).unwrap());
        let out = sim_att(&mut tape, a, b, &[true, true]);
        let row = tape.value(out).row(0).to_vec();
        assert!((row[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((row[1] - 0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn similarity_matrix_oracle_and_linearity() {
        // width 2 vectors rp_i = (1,1), rq_j = (2,2), w_s = ones(6):
        // S_ij = (1+1) + (2+2) + (2+2) = 10
        let mut tape = Tape::new();
        let rp = tape.input(Tensor::from_elem((2, 2), 1.0));
        let rq = tape.input(Tensor::from_elem((3, 2), 2.0));
        let ws = tape.input(Tensor::from_elem((6, 1), 1.0));
        let s = similarity_matrix(&mut tape, rp, rq, ws, 2);
        for v in tape.value(s).iter() {
            assert!((v - 10.0).abs() < 1e-12);
        }

        // zero weights give zero scores; doubling the weights doubles S
        let mut tape = Tape::new();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let rp_t = rand_tensor(&mut rng, 3, 4);
        let rq_t = rand_tensor(&mut rng, 2, 4);
        let ws_t = rand_tensor(&mut rng, 12, 1);
        let rp = tape.input(rp_t.clone());
        let rq = tape.input(rq_t.clone());
        let zero = tape.input(Tensor::zeros((12, 1)));
        let s0 = similarity_matrix(&mut tape, rp, rq, zero, 4);
        assert!(tape.value(s0).iter().all(|&v| v == 0.0));
        let ws1 = tape.input(ws_t.clone());
        let s1 = similarity_matrix(&mut tape, rp, rq, ws1, 4);
        let ws2 = tape.input(&ws_t * 2.0);
        let s2 = similarity_matrix(&mut tape, rp, rq, ws2, 4);
        let diff = tape.value(s2) - &(tape.value(s1) * 2.0);
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn question_merged_singleton_and_constant_rows() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        // J = 1: every merged row equals the single question vector
        let mut tape = Tape::new();
        let s = tape.input(rand_tensor(&mut rng, 3, 1));
        let rq = tape.input(Tensor::from_shape_vec((1, 2), vec![0.3, -0.9]).unwrap());
        let out = question_merged(&mut tape, s, rq, &[true]);
        for i in 0..3 {
            assert_eq!(tape.value(out).row(i).to_vec(), vec![0.3, -0.9]);
        }

        // constant similarity row: uniform average of question vectors
        let mut tape = Tape::new();
        let s = tape.input(Tensor::zeros((1, 2)));
        let rq_t = rand_tensor(&mut rng, 2, 3);
        let rq = tape.input(rq_t.clone());
        let out = question_merged(&mut tape, s, rq, &[true, true]);
        let expect = (&rq_t.row(0) + &rq_t.row(1)) / 2.0;
        for (a, b) in tape.value(out).row(0).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn passage_merged_tiling_and_saturation() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        // T = 1 reduces to that row
        let mut tape = Tape::new();
        let s = tape.input(rand_tensor(&mut rng, 1, 2));
        let rp_t = rand_tensor(&mut rng, 1, 4);
        let rp = tape.input(rp_t.clone());
        let out = passage_merged(&mut tape, s, rp, &[true, true], &[true]);
        for (a, b) in tape.value(out).row(0).iter().zip(rp_t.row(0).iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        // a row dominating by +1000 captures all the weight
        let mut tape = Tape::new();
        let mut s_t = rand_tensor(&mut rng, 3, 2);
        s_t.row_mut(1).mapv_inplace(|v| v + 1000.0);
        let s = tape.input(s_t);
        let rp_t = rand_tensor(&mut rng, 3, 2);
        let rp = tape.input(rp_t.clone());
        let out = passage_merged(&mut tape, s, rp, &[true, true], &[true; 3]);
        for (a, b) in tape.value(out).row(0).iter().zip(rp_t.row(1).iter()) {
            assert!((a - b).abs() < 1e-9);
        }

        // all rows identical for random inputs
        let mut tape = Tape::new();
        let s = tape.input(rand_tensor(&mut rng, 4, 3));
        let rp = tape.input(rand_tensor(&mut rng, 4, 2));
        let out = passage_merged(&mut tape, s, rp, &[true; 3], &[true; 4]);
        let v = tape.value(out);
        for i in 1..4 {
            assert_eq!(v.row(i), v.row(0));
        }
    }

    #[test]
    fn self_match_singleton_and_identical_rows() {
        // T = 1: output equals input
        let mut tape = Tape::new();
        let u = tape.input(Tensor::from_shape_vec((1, 2), vec![0.2, -0.7]).unwrap());
        let out = self_match(&mut tape, u, &[true]);
        assert_eq!(tape.value(out).row(0).to_vec(), vec![0.2, -0.7]);

        // identical rows stay fixed under self matching
        let mut tape = Tape::new();
        let u = tape.input(Tensor::from_elem((3, 2), 0.4));
        let out = self_match(&mut tape, u, &[true; 3]);
        for v in tape.value(out).iter() {
            assert!((v - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn self_match_three_rows_matches_hand_attention() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let u_t = rand_tensor(&mut rng, 3, 2);
        let mut tape = Tape::new();
        let u = tape.input(u_t.clone());
        let out = self_match(&mut tape, u, &[true; 3]);
        // brute-force attention oracle
        for i in 0..3 {
            let scores: Vec<f64> = (0..3).map(|j| u_t.row(i).dot(&u_t.row(j))).collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut expect = vec![0.0; 2];
            for j in 0..3 {
                for k in 0..2 {
                    expect[k] += exps[j] / z * u_t[(j, k)];
                }
            }
            for k in 0..2 {
                assert!((tape.value(out)[(i, k)] - expect[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pointer_uniform_masked_and_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        // zero start weights give a uniform start distribution
        let mut tape = Tape::new();
        let feats = tape.input(rand_tensor(&mut rng, 4, 3));
        let wps = tape.input(Tensor::zeros((3, 1)));
        let wpe = tape.input(rand_tensor(&mut rng, 4, 1));
        let (ps, _) = pointer(&mut tape, feats, wps, wpe, &[true; 4]);
        for v in tape.value(ps).iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }

        // masked positions carry exactly zero probability
        let mut tape = Tape::new();
        let feats = tape.input(rand_tensor(&mut rng, 4, 3));
        let wps = tape.input(rand_tensor(&mut rng, 3, 1));
        let wpe = tape.input(rand_tensor(&mut rng, 4, 1));
        let mask = [true, true, false, true];
        let (ps, pe) = pointer(&mut tape, feats, wps, wpe, &mask);
        assert_eq!(tape.value(ps)[(0, 2)], 0.0);
        assert_eq!(tape.value(pe)[(0, 2)], 0.0);

        // T = 3 scalar oracle for both distributions
        let feats_t = rand_tensor(&mut rng, 3, 2);
        let wps_t = rand_tensor(&mut rng, 2, 1);
        let wpe_t = rand_tensor(&mut rng, 3, 1);
        let mut tape = Tape::new();
        let feats = tape.input(feats_t.clone());
        let wps = tape.input(wps_t.clone());
        let wpe = tape.input(wpe_t.clone());
        let (ps, pe) = pointer(&mut tape, feats, wps, wpe, &[true; 3]);

        let softmax = |logits: &[f64]| {
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect::<Vec<_>>()
        };
        let s_logits: Vec<f64> = (0..3).map(|i| feats_t.row(i).dot(&wps_t.column(0))).collect();
        let ps_oracle = softmax(&s_logits);
        for i in 0..3 {
            assert!((tape.value(ps)[(0, i)] - ps_oracle[i]).abs() < 1e-12);
        }
        let e_logits: Vec<f64> = (0..3)
            .map(|i| {
                feats_t.row(i).dot(&wpe_t.column(0).slice(ndarray::s![0..2]))
                    + ps_oracle[i] * wpe_t[(2, 0)]
            })
            .collect();
        let pe_oracle = softmax(&e_logits);
        for i in 0..3 {
            assert!((tape.value(pe)[(0, i)] - pe_oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bisru_matches_scalar_recurrence_oracle() {
        // d = 1, length 3 sequence, hand-stepped recurrence
        let mut tape = Tape::new();
        let x_t = Tensor::from_shape_vec((3, 1), vec![0.5, -1.0, 2.0]).unwrap();
        let x = tape.input(x_t.clone());
        let mut param_ids = IndexMap::new();
        let names = [
            ("w", 0.8),
            ("wf", 0.3),
            ("wr", -0.4),
        ];
        for dir in ["fwd", "bwd"] {
            for (n, v) in names {
                let id = tape.input(Tensor::from_elem((1, 1), v));
                param_ids.insert(format!("enc.l0.{dir}.{n}"), id);
            }
            for n in ["bf", "br"] {
                let id = tape.input(Tensor::from_elem((1, 1), 0.1));
                param_ids.insert(format!("enc.l0.{dir}.{n}"), id);
            }
        }
        let out = bisru_layer(&mut tape, x, "enc.l0", 1, &param_ids, &[true; 3]);

        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let step = |xs: &[f64]| {
            let mut c = 0.0;
            let mut hs = Vec::new();
            for &xv in xs {
                let xt = 0.8 * xv;
                let f = sigmoid(0.3 * xv + 0.1);
                let r = sigmoid(-0.4 * xv + 0.1);
                c = f * c + (1.0 - f) * xt;
                hs.push(r * c.tanh() + (1.0 - r) * xv);
            }
            hs
        };
        let fwd = step(&[0.5, -1.0, 2.0]);
        let bwd_rev = step(&[2.0, -1.0, 0.5]);
        let v = tape.value(out);
        for t in 0..3 {
            assert!((v[(t, 0)] - fwd[t]).abs() < 1e-12);
            assert!((v[(t, 1)] - bwd_rev[2 - t]).abs() < 1e-12);
        }
    }

    #[test]
    fn bisru_length_one_directions_agree_with_shared_params() {
        // both directions see the same single input; with shared weights
        // the two halves coincide
        let mut tape = Tape::new();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let x = tape.input(rand_tensor(&mut rng, 1, 3));
        let mut param_ids = IndexMap::new();
        for n in ["w", "wf", "wr", "wh"] {
            let t = rand_tensor(&mut rng, 3, 2);
            let fid = tape.input(t.clone());
            let bid = tape.input(t);
            param_ids.insert(format!("enc.l0.fwd.{n}"), fid);
            param_ids.insert(format!("enc.l0.bwd.{n}"), bid);
        }
        for n in ["bf", "br"] {
            let t = rand_tensor(&mut rng, 1, 2);
            let fid = tape.input(t.clone());
            let bid = tape.input(t);
            param_ids.insert(format!("enc.l0.fwd.{n}"), fid);
            param_ids.insert(format!("enc.l0.bwd.{n}"), bid);
        }
        let out = bisru_layer(&mut tape, x, "enc.l0", 2, &param_ids, &[true]);
        let v = tape.value(out);
        for k in 0..2 {
            assert_eq!(v[(0, k)], v[(0, k + 2)]);
        }
    }

    #[test]
    fn bisru_masked_tail_rows_are_zero() {
        let mut tape = Tape::new();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = tape.input(rand_tensor(&mut rng, 4, 2));
        let mut param_ids = IndexMap::new();
        for dir in ["fwd", "bwd"] {
            for n in ["w", "wf", "wr"] {
                let id = tape.input(rand_tensor(&mut rng, 2, 2));
                param_ids.insert(format!("enc.l0.{dir}.{n}"), id);
            }
            for n in ["bf", "br"] {
                let id = tape.input(rand_tensor(&mut rng, 1, 2));
                param_ids.insert(format!("enc.l0.{dir}.{n}"), id);
            }
        }
        let out = bisru_layer(&mut tape, x, "enc.l0", 2, &param_ids, &[true, true, false, false]);
        let v = tape.value(out);
        for t in 2..4 {
            for k in 0..4 {
                assert_eq!(v[(t, k)], 0.0);
            }
        }
    }
}
