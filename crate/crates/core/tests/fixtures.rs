//! Reference values computed with an independent dense Python implementation
//! (scipy `fsolve` on the polar injection equations) and frozen here.

use droopcert::case::bundled_case;
use droopcert::certificate::alpha_theory_all;
use droopcert::powerflow::{ideal_reactive, solve, PowerFlowSpec, SolverOptions};

fn assert_close(label: &str, got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "{label}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "{label}[{i}]: {g} vs {w}");
    }
}

fn base_case(name: &str) -> (droopcert::case::Case, droopcert::grid::OperatingPoint) {
    let case = bundled_case(name).unwrap();
    let spec = PowerFlowSpec::new(case.p_set.clone(), case.q_set.clone(), case.slack).with_v_init(case.v_set_or_unity());
    let op = solve(&case.grid, &spec, SolverOptions::default()).unwrap().op;
    (case, op)
}

#[test]
fn four_bus_operating_point_and_bounds() {
    let (case, op) = base_case("four_bus");
    assert_close("V", &op.v, &[1.02, 1.026262470105373, 1.0194100069605392, 1.0210932829865411], 1e-9);
    assert_close(
        "phi",
        &op.phi,
        &[0.0, 0.017560086523360253, -0.022748793942598548, -0.029276429500644498],
        1e-9,
    );
    let alpha = alpha_theory_all(&case.grid.laplacian(), &op).unwrap();
    assert_close(
        "alpha_theory",
        &alpha,
        &[0.11543254242803913, -0.1699677733642062, 0.12294346134902723, -0.029821810022238715],
        1e-8,
    );
}

#[test]
fn ieee14_base_operating_point_and_bounds() {
    let (case, op) = base_case("ieee14");
    #[rustfmt::skip]
    let v = [
        1.06, 1.05494096041481, 1.0458511438413285, 1.038834079634671, 1.038232294385,
        1.0121979544358641, 1.0288478162467696, 1.0578225253915319, 1.0068791669602823,
        1.0031426108365638, 1.0057995928380485, 1.00540905706087, 1.0034311238760123,
        0.9974751550604901,
    ];
    #[rustfmt::skip]
    let phi = [
        0.0, -0.07860075877845259, -0.20527439313589477, -0.16781278277237266,
        -0.1435908294133698, -0.24420230433947995, -0.2250452677957688, -0.22504526779576875,
        -0.25609663341799843, -0.26138293834089776, -0.25627883939687496, -0.2631347453143288,
        -0.26597056009919284, -0.2830158672244144,
    ];
    #[rustfmt::skip]
    let alpha_ref = [
        -0.15895000413320898, -0.027102141929920748, 0.10438512653297918, 0.1268849505714265,
        0.3891673933485599, 0.0022710603743753555, 0.050213921485129875, -0.32897767975889447,
        0.382933606525956, 0.11657542163115225, 0.0375489635172159, 0.03474530846703759,
        0.12471412536532005, 0.10732634576419692,
    ];
    assert_close("V", &op.v, &v, 1e-9);
    assert_close("phi", &op.phi, &phi, 1e-9);
    let alpha = alpha_theory_all(&case.grid.laplacian(), &op).unwrap();
    assert_close("alpha_theory", &alpha, &alpha_ref, 1e-8);
}

#[test]
fn ieee14_ideal_reactive_injections() {
    let case = bundled_case("ieee14").unwrap();
    let v_set = case.v_set_or_unity();
    let op = ideal_reactive(&case.grid, &case.p_set, &v_set, case.slack, SolverOptions::default()).unwrap();
    #[rustfmt::skip]
    let q = [
        0.6651187344332641, 0.60358684443203, -0.06761899614488875, -0.25960912624838883,
        -0.710108360318003, 1.5663952817190712, -0.4980761045879536, 0.5569117229634282,
        0.013150771210625134, 0.00024265206080897883, -0.35139170888345994, -0.2729262763732567,
        -0.5349674774034971, 0.0017267207098257131,
    ];
    #[rustfmt::skip]
    let alpha_ref = [
        -0.833689433389142, -0.592576154490555, 0.34024610105575975, 0.7358614843998277,
        1.8034861157993234, -2.834655045638215, 1.047594582010066, -1.021856372409961,
        0.026367347577654042, 0.0004853116585127241, 0.7049592416372811, 0.5487100467379118,
        1.0794481084523329, 0.0034544231299176607,
    ];
    assert_close("q", &op.q, &q, 1e-9);
    let alpha = alpha_theory_all(&case.grid.laplacian(), &op).unwrap();
    assert_close("alpha_theory", &alpha, &alpha_ref, 1e-8);
}

#[test]
fn two_bus_negative_bound() {
    let case = bundled_case("two_bus").unwrap();
    let op = droopcert::grid::OperatingPoint::from_polar(&case.grid.laplacian(), vec![1.0, 0.9], vec![0.0, 0.0]).unwrap();
    let alpha = alpha_theory_all(&case.grid.laplacian(), &op).unwrap();
    assert_close("alpha_theory", &alpha, &[-0.2, 0.2], 1e-12);
}
