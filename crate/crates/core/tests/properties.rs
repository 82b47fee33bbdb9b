mod common;

use common::invariants;

macro_rules! invariant_tests {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                invariants::$name().unwrap();
            }
        )*
    };
}

invariant_tests!(
    refold_inverts_unfold,
    unfold_of_mode_product,
    kronecker_identity,
    outer_product_norm,
    spectral_norm_lower_bound,
    projection_idempotent,
    svd_routes_agree,
    oracle_equivalence,
    permutation_equivariance,
    scale_equivariance,
    rotation_invariance,
    dgp_determinism,
    factor_stationarity,
    ladder_consistency,
    norm_relations,
    autocov_cauchy_schwarz,
    rate_block_symmetry,
    varimax_column_space,
    moving_average_commutes,
    loss_bounds,
    series_round_trips,
);
