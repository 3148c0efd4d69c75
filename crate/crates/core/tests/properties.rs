mod common;

macro_rules! property {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                if let Err(e) = common::$name() {
                    panic!("{e}");
                }
            }
        )*
    };
}

property!(
    schrodinger_preserves_norm,
    lindblad_preserves_state,
    kerr_ramp_conserves_parity,
    rk4_fourth_order,
    closed_form_unitary,
    trajectory_geometry,
    fidelity_phase_invariant,
    error_bias_preserved,
    stochastic_seed_determinism,
    gate_run_determinism,
);

#[test]
fn every_check_is_listed() {
    assert_eq!(common::all().len(), 10);
}
