//! Check families and the statement each one exercises. The README carries
//! the same table.

/// `(suite, family, anchor)`.
pub const COVERAGE: &[(&str, &str, &str)] = &[
    (
        "identities",
        "reconstruction",
        "f = E_{Q0}^a f + sum_k D_k^a f",
    ),
    (
        "identities",
        "top_term_series",
        "adapted differences of the top term sum to zero",
    ),
    (
        "identities",
        "adapted_composition",
        "E_k^a E_l^a = E_k^a for l <= k",
    ),
    (
        "identities",
        "squared_difference",
        "(D_k^a)^2 f = D_k^a f + omega_k^a E_k f",
    ),
    (
        "identities",
        "local_squared_difference",
        "(D_Q^a)^2 f = D_Q^a f + omega_Q^a <f>_Q",
    ),
    (
        "identities",
        "adjoint_formula",
        "(D_k^a)* g = A_{k-1} g - A_k g with A_k g = E_k(b_k^a g)/E_k b_k^a",
    ),
    (
        "identities",
        "adjoint_duality",
        "<(D_k^a)* g, f> = <g, D_k^a f>",
    ),
    (
        "identities",
        "haar_expansion",
        "D_Q^a f = sum_i <f>_{Q_i} phi_{Q,i}^a",
    ),
    ("identities", "haar_sup", "|phi_{Q,i}^a| <= 2 delta^-2"),
    (
        "identities",
        "haar_l1",
        "||phi_{Q,i}^a||_1 <= 2 delta^-2 mu(Q_i)",
    ),
    (
        "identities",
        "haar_support",
        "phi_{Q,i}^a is supported on Q",
    ),
    (
        "identities",
        "haar_mean_zero",
        "integral of phi_{Q,i}^a vanishes",
    ),
    (
        "identities",
        "omega_support",
        "omega_k^a vanishes where b_{k-1}^a = b_k^a",
    ),
    (
        "identities",
        "omega_sup",
        "|omega_k^a| <= delta^-2 + delta^-4",
    ),
    ("identities", "omega_mean_zero", "E_{k-1} omega_k^a = 0"),
    (
        "identities",
        "unchanged_means",
        "E_{k-1} b_{k-1}^a = E_{k-1} b_k^a where b_{k-1}^a = b_k^a",
    ),
    (
        "identities",
        "chi_pointwise",
        "layer indicator chi_{k-1} equals the pointwise change of b^a",
    ),
    (
        "identities",
        "nontrivial_layers",
        "non-indicator fixtures have at least two layers",
    ),
    (
        "layers",
        "layer_decay",
        "later layer mass inside Q is at most (1+delta)^-j mu(Q)",
    ),
    (
        "layers",
        "layer_decay_failures",
        "fixtures violating the layer mass decay",
    ),
    (
        "layers",
        "layer_tau",
        "empirical layer decay rate is at least tau = delta/(1+delta)",
    ),
    (
        "badcubes",
        "bad_probability",
        "P[Q is n-bad] <= 2N 2^{-max(r,n) gamma}/(1 - 2^-gamma)",
    ),
    (
        "sqfn",
        "adapted_diff_growth",
        "||sum eps_k D_k^a f||_p <= C ||f||_p",
    ),
    (
        "sqfn",
        "adapted_diff_adjoint_growth",
        "||sum eps_k (D_k^a)* f||_p <= C ||f||_p",
    ),
    ("sqfn", "diff_growth", "||sum eps_k D_k f||_p <= C ||f||_p"),
    (
        "sqfn",
        "chi_prev_growth",
        "||sum eps_k chi_{k-1} E_{k-1} f||_p <= C ||f||_p",
    ),
    (
        "sqfn",
        "quotient_growth",
        "randomized norm of the unchanged-layer quotient differences",
    ),
    (
        "sqfn",
        "norm_equiv_upper_growth",
        "top term plus adapted square functions bounded by ||f||_p",
    ),
    (
        "sqfn",
        "norm_equiv_lower_growth",
        "||f||_p bounded by top term plus adapted square functions",
    ),
    (
        "sqfn",
        "stein_growth",
        "Stein inequality ||sum eps_k E_k f_k|| <= C ||sum eps_k f_k||",
    ),
    (
        "sqfn",
        "improved_contraction_growth",
        "improved contraction principle with L^t multipliers",
    ),
    (
        "sqfn",
        "rmf_growth",
        "Rademacher maximal function ||M_R f||_p <= C ||f||_p",
    ),
    (
        "carleson",
        "chi_carleson",
        "Car^1 of the layer indicators <= 1 + 1/tau",
    ),
    (
        "carleson",
        "embedding_growth",
        "||sum eps_k d_k E_k f||_p <= C Car^1(d) ||f||_p",
    ),
    (
        "carleson",
        "embedding_signs",
        "lattice embedding with multipliers |c_k| <= 1 stays within 2x",
    ),
    (
        "decoupling",
        "bracket_growth",
        "tangent decoupling two-sided ratio is stable under doubling",
    ),
    (
        "decoupling",
        "trick_growth",
        "decoupled kernel averages bounded by the martingale sum",
    ),
    (
        "decoupling",
        "enumeration_match",
        "Monte Carlo tangent moment agrees with full enumeration",
    ),
    (
        "matrix",
        "decay_bound",
        "separated and deep-nested blocks obey the explicit decay bounds",
    ),
    (
        "matrix",
        "decay_coverage",
        "separated and deep-nested pairs both occur",
    ),
    (
        "matrix",
        "decay_slope",
        "separated blocks decay like dist^-(d+alpha)",
    ),
    (
        "matrix",
        "kernel_constants",
        "sampled kernel size and smoothness within their constants",
    ),
    (
        "matrix",
        "base_decay_bound",
        "decay bounds on the configured instance",
    ),
    (
        "ledger",
        "ledger_identity",
        "<g,Tf> = block sum plus both top terms",
    ),
    (
        "ledger",
        "bad_mass_decrease",
        "bad-class mass fraction decreases with r",
    ),
    (
        "ledger",
        "bad_mass_monotone",
        "per-fixture bad-class mass fraction never rises with r",
    ),
    (
        "ledger",
        "base_ledger_identity",
        "pairing identity on the configured instance",
    ),
    (
        "paraproduct",
        "smap_equivalence",
        "chi_{Q,R} = 1 iff S(Q) is strictly inside R",
    ),
    (
        "paraproduct",
        "smap_monotonicity",
        "chi_{Q,R} = 1 implies chi_{Q,parent(R)} = 1",
    ),
    (
        "paraproduct",
        "smap_nonempty",
        "some cubes admit a stopping cube",
    ),
    (
        "paraproduct",
        "paraproduct_duality",
        "<Pi g, f> equals the direct sum over (Q, S(Q))",
    ),
    (
        "paraproduct",
        "paraproduct_telescoping",
        "sum over R of the paraproduct blocks telescopes",
    ),
    (
        "comparable",
        "classification",
        "every pair falls in exactly one of bad, separated, deep-nested, comparable",
    ),
    (
        "comparable",
        "child_containment",
        "good Q inside R with l(Q) < 2^-r l(R) lies in one child of R",
    ),
    (
        "comparable",
        "partition_exact",
        "collar regions partition Q_i and R_j",
    ),
    (
        "comparable",
        "comparable_msum",
        "M_1 + ... + M_5 = <1_{R_j} psi, T 1_{Q_i} phi>",
    ),
    (
        "comparable",
        "collar_bound",
        "P[x in collar union] <= 4N(r+1) eta",
    ),
    (
        "comparable",
        "collar_linearity",
        "collar probability is roughly linear in eta",
    ),
    ("*", "error", "a module reported a hard error"),
];

/// Anchor of a check name `family` or `family[params]`.
pub fn anchor(name: &str) -> Option<&'static str> {
    let family = name.split('[').next().unwrap_or(name);
    COVERAGE
        .iter()
        .find(|(_, f, _)| *f == family)
        .map(|(_, _, a)| *a)
}

/// Markdown rows as they appear in the README.
pub fn markdown_rows() -> Vec<String> {
    COVERAGE
        .iter()
        .map(|(s, f, a)| format!("| {s} | `{f}` | {a} |"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_are_unique() {
        let mut f: Vec<&str> = COVERAGE.iter().map(|c| c.1).collect();
        f.sort_unstable();
        let n = f.len();
        f.dedup();
        assert_eq!(f.len(), n);
        assert_eq!(
            anchor("bad_probability[gamma=0.1]"),
            anchor("bad_probability")
        );
        assert!(anchor("nope").is_none());
    }
}
