//! Independent scalar oracle for the weighted NLL and a central-difference
//! gradient comparison. Shared with the acceptance target.

use stylebc::neural::{weighted_nll, ArchConfig, Codebook, MlpPolicy, Sample};

pub const H: f64 = 1e-5;
pub const MAX_REL: f64 = 1e-4;
// Below this magnitude both sides are treated as zero-ish and compared absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn oracle_loss(
    arch: &ArchConfig,
    params: &[f64],
    table_live: &[f64],
    table_frozen: &[f64],
    batch: &[Sample],
) -> f64 {
    let dz = arch.style_dim;
    let mut dims = vec![2 + dz];
    dims.extend(std::iter::repeat_n(arch.hidden_dim, arch.num_hidden));
    dims.push(2);
    let n_lin = dims.len() - 1;
    let mut total = 0.0;
    for s in batch {
        let mut x = vec![
            (s.state.x - arch.input_offset[0]) * arch.input_scale[0],
            (s.state.y - arch.input_offset[1]) * arch.input_scale[1],
        ];
        match s.style_index {
            Some(j) => {
                let table = if s.stop_grad { table_frozen } else { table_live };
                x.extend_from_slice(&table[j * dz..(j + 1) * dz]);
            }
            None => x.extend(std::iter::repeat_n(0.0, dz)),
        }
        let mut hs: Vec<Vec<f64>> = Vec::new();
        let mut off = 0;
        let mut out = Vec::new();
        for l in 0..n_lin {
            let (fi, fo) = (dims[l], dims[l + 1]);
            let w = &params[off..off + fi * fo];
            let b = &params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut y = vec![0.0; fo];
            for o in 0..fo {
                let mut acc = b[o];
                for i in 0..fi {
                    acc += w[o * fi + i] * x[i];
                }
                y[o] = acc;
            }
            if l == n_lin - 1 {
                out = y;
                break;
            }
            let mut h: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
            let r = arch.residual_every;
            if r > 0 && l >= r && l % r == 0 {
                for (hv, sv) in h.iter_mut().zip(&hs[l - r]) {
                    *hv = (*hv + sv) / 2f64.sqrt();
                }
            }
            hs.push(h.clone());
            x = h;
        }
        let mut logp = 0.0;
        for d in 0..2 {
            let ls = params[off + d].clamp(-5.0, 2.0);
            let a = [s.action.dx, s.action.dy][d];
            let u = (a - out[d]) / ls.exp();
            logp += -0.5 * u * u - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        total += s.weight * logp;
    }
    -total / batch.len() as f64
}

pub fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(REL_FLOOR)
}

/// Largest relative error between analytic and central-difference gradients
/// over every policy parameter and codebook entry.
pub fn max_relative_error(policy: &MlpPolicy, codebook: &Codebook, batch: &[Sample]) -> f64 {
    let arch = policy.arch().clone();
    let (loss, grads) = weighted_nll(policy, codebook, batch).unwrap();
    let table = codebook.table().to_vec();
    let p0 = policy.params().to_vec();
    let base = oracle_loss(&arch, &p0, &table, &table, batch);
    assert!((loss - base).abs() <= 1e-12 * base.abs().max(1.0), "{loss} vs {base}");

    let mut worst: f64 = 0.0;
    let mut p = p0.clone();
    for k in 0..p.len() {
        p[k] = p0[k] + H;
        let up = oracle_loss(&arch, &p, &table, &table, batch);
        p[k] = p0[k] - H;
        let dn = oracle_loss(&arch, &p, &table, &table, batch);
        p[k] = p0[k];
        worst = worst.max(rel_err(grads.policy[k], (up - dn) / (2.0 * H)));
    }
    let mut t = table.clone();
    for k in 0..t.len() {
        t[k] = table[k] + H;
        let up = oracle_loss(&arch, &p0, &t, &table, batch);
        t[k] = table[k] - H;
        let dn = oracle_loss(&arch, &p0, &t, &table, batch);
        t[k] = table[k];
        worst = worst.max(rel_err(grads.codebook[k], (up - dn) / (2.0 * H)));
    }
    worst
}
