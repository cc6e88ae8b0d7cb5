//! Export of assembled problems in SDPA sparse format (.dat-s).
//!
//! Useful for cross-checking feasibility against external solvers. SDPA
//! expects `X(b) = sum_k x_k Fk(b) - F0(b) >= 0`, so the constant blocks
//! are written negated relative to the internal `F0 + sum_k x_k Fk >= 0`
//! convention. The objective is zero: these are feasibility problems.

use super::assemble::StandardForm;
use std::fmt::Write;

pub fn to_sdpa_sparse(sf: &StandardForm) -> String {
    let mut s = String::new();
    for (i, c) in sf.cones.iter().enumerate() {
        let _ = writeln!(s, "* block {} = {} ({:?}, dim {})", i + 1, c.name, c.sense, c.dim);
    }
    for slot in &sf.slots {
        let _ = writeln!(
            s,
            "* vars {}..{} = {} ({:?} {}x{})",
            slot.offset + 1,
            slot.offset + slot.var.scalar_count(),
            slot.var.name,
            slot.var.kind,
            slot.var.rows,
            slot.var.cols
        );
    }
    let _ = writeln!(s, "{}", sf.n_scalars);
    let _ = writeln!(s, "{}", sf.cones.len());
    let dims: Vec<String> = sf.cones.iter().map(|c| c.dim.to_string()).collect();
    let _ = writeln!(s, "{}", dims.join(" "));
    let zeros = vec!["0"; sf.n_scalars];
    let _ = writeln!(s, "{}", zeros.join(" "));

    // <matno> <blkno> <i> <j> <value>, 1-based, upper triangle only.
    for (bi, c) in sf.cones.iter().enumerate() {
        let blk = bi + 1;
        for j in 0..c.dim {
            for i in 0..=j {
                let v = -0.5 * (c.f0[(i, j)] + c.f0[(j, i)]);
                if v != 0.0 {
                    let _ = writeln!(s, "0 {} {} {} {}", blk, i + 1, j + 1, v);
                }
            }
        }
    }
    for (bi, c) in sf.cones.iter().enumerate() {
        let blk = bi + 1;
        for (k, f) in &c.fk {
            for j in 0..c.dim {
                for i in 0..=j {
                    let v = 0.5 * (f[(i, j)] + f[(j, i)]);
                    if v != 0.0 {
                        let _ = writeln!(s, "{} {} {} {} {}", k + 1, blk, i + 1, j + 1, v);
                    }
                }
            }
        }
    }
    s
}
