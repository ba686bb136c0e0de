use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{ExampleRecord, FeatureField, FeatureSchema};
use crate::error::Error;
use crate::numcore::{grad_check, GradCheckOptions, GradStore, ParamStore, Tape, Tensor, Var};

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn set(store: &mut ParamStore, name: &str, rows: &[Vec<f64>]) {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = if rows.len() == 1 && store.value(id).shape().len() == 1 {
        Tensor::vector(rows[0].clone())
    } else {
        Tensor::from_rows(rows).unwrap()
    };
    assert_eq!(t.shape(), store.value(id).shape(), "{name}");
    *store.value_mut(id) = t;
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn record(scenario: usize, user: usize, item: usize) -> ExampleRecord {
    ExampleRecord {
        scenario,
        user,
        item,
        context: vec![],
        click: false,
        order: false,
    }
}

#[test]
fn embedding_single_lookup() {
    let mut store = ParamStore::new();
    let table = EmbeddingTable::new(&mut store, "f", 3, 2, &mut rng()).unwrap();
    set(&mut store, "f.table", &[vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]);
    let mut tape = Tape::new(&store);
    let x = table.lookup(&mut tape, &[0]).unwrap();
    assert_eq!(tape.value(x).data(), &[0.1, 0.2]);
}

#[test]
fn embedding_width_is_sum_of_field_dims() {
    let schema = FeatureSchema {
        fields: vec![
            FeatureField { name: "user".into(), vocab: 4, dim: 2 },
            FeatureField { name: "item".into(), vocab: 4, dim: 3 },
            FeatureField { name: "scenario".into(), vocab: 2, dim: 1 },
        ],
    };
    let mut store = ParamStore::new();
    let emb = FeatureEmbeddings::new(&mut store, "emb", &schema, &mut rng()).unwrap();
    assert_eq!(emb.width(), 6);
    let mut tape = Tape::new(&store);
    let r = record(1, 3, 2);
    let x = emb.embed(&mut tape, &[&r]).unwrap();
    assert_eq!(tape.value(x).shape(), &[1, 6]);

    let bad = record(0, 4, 0);
    match emb.embed(&mut tape, &[&bad]) {
        Err(Error::Index { what, index: 4, .. }) => assert!(what.contains("user")),
        other => panic!("expected index error, got {other:?}"),
    }
}

#[test]
fn embedding_gradient_reaches_only_looked_up_rows() {
    let mut store = ParamStore::new();
    let table = EmbeddingTable::new(&mut store, "f", 5, 2, &mut rng()).unwrap();
    let ids = [1usize, 3, 1];
    let f = |tape: &mut Tape<'_>| {
        let x = table.lookup(tape, &ids)?;
        let sq = tape.mul(x, x)?;
        Ok(tape.sum(sq))
    };
    let report = grad_check(&store, table.weights, f, &GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");

    let mut tape = Tape::new(&store);
    let loss = f(&mut tape).unwrap();
    let mut grads = GradStore::for_store(&store);
    tape.backward(loss, &mut grads).unwrap();
    let g = grads.get(table.weights);
    for row in 0..5 {
        let touched = g[row * 2] != 0.0 || g[row * 2 + 1] != 0.0;
        assert_eq!(touched, row == 1 || row == 3, "row {row}");
    }
}

fn identity_like_sei(store: &mut ParamStore) -> SeiModule {
    let sei = SeiModule::new(store, "sei", 2, 2, &[], 2, true, &mut rng()).unwrap();
    set(store, "sei.expert0.layer0.w", &[vec![1.0, 0.0], vec![0.0, 0.0]]);
    set(store, "sei.expert0.layer0.b", &[vec![0.0, 0.0]]);
    set(store, "sei.expert1.layer0.w", &[vec![0.0, 0.0], vec![0.0, 1.0]]);
    set(store, "sei.expert1.layer0.b", &[vec![0.0, 0.0]]);
    sei
}

#[test]
fn sei_single_expert_is_identity_mixing() {
    let mut store = ParamStore::new();
    let sei = SeiModule::new(&mut store, "sei", 3, 1, &[4], 2, true, &mut rng()).unwrap();
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_rows(&[vec![0.3, -0.2, 0.9], vec![1.0, 0.5, -0.4]]).unwrap());
    let out = sei.forward(&mut tape, x).unwrap();
    let direct = sei.sub_experts[0].forward(&mut tape, x).unwrap();
    assert_eq!(tape.value(out.output), tape.value(direct));
    assert_eq!(tape.value(out.gate_weights).data(), &[1.0, 1.0]);
}

#[test]
fn sei_identical_experts_ignore_gate() {
    let mut store = ParamStore::new();
    let sei = SeiModule::new(&mut store, "sei", 2, 3, &[], 2, true, &mut rng()).unwrap();
    for k in 0..3 {
        set(&mut store, &format!("sei.expert{k}.layer0.w"), &[vec![0.5, -1.0], vec![2.0, 0.25]]);
        set(&mut store, &format!("sei.expert{k}.layer0.b"), &[vec![0.1, 0.2]]);
    }
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_rows(&[vec![0.4, -0.3]]).unwrap());
    let out = sei.forward(&mut tape, x).unwrap();
    let direct = sei.sub_experts[0].forward(&mut tape, x).unwrap();
    assert_close(tape.value(out.output).data(), tape.value(direct).data(), 1e-15);
}

#[test]
fn sei_two_experts_hand_computed_mixture() {
    let mut store = ParamStore::new();
    let sei = identity_like_sei(&mut store);
    // logits [0, ln 3] on x = [1, 1]  →  weights [1/4, 3/4]
    set(&mut store, "sei.gate.w", &[vec![0.0, 0.0], vec![3f64.ln(), 0.0]]);
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
    let out = sei.forward(&mut tape, x).unwrap();
    assert_close(tape.value(out.gate_weights).data(), &[0.25, 0.75], 1e-15);
    assert_close(tape.value(out.output).data(), &[0.25, 0.75], 1e-15);
}

#[test]
fn sei_requires_sub_experts() {
    let mut store = ParamStore::new();
    assert!(matches!(
        SeiModule::new(&mut store, "sei", 2, 0, &[], 2, true, &mut rng()),
        Err(Error::Config(_))
    ));
}

fn san_with_logits(store: &mut ParamStore, scenarios: usize, scenario: usize, logits: &[f64]) -> San {
    let san = San::new(store, "san", scenarios, 1, &mut rng()).unwrap();
    let mut table = vec![vec![0.0]; scenarios];
    table[scenario] = vec![1.0];
    set(store, "san.indicator.table", &table);
    let rows: Vec<Vec<f64>> = logits.iter().map(|&l| vec![l]).collect();
    set(store, &format!("san.scenario{scenario}.gate.w"), &rows);
    san
}

#[test]
fn san_with_two_scenarios_copies_the_other() {
    let mut store = ParamStore::new();
    let san = San::new(&mut store, "san", 2, 4, &mut rng()).unwrap();
    let mut tape = Tape::new(&store);
    let s_other = tape.input(Tensor::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap());
    let (a, w) = san.forward(&mut tape, 0, &[s_other]).unwrap();
    assert_eq!(tape.value(w).data(), &[1.0]);
    assert_eq!(tape.value(a).data(), tape.value(s_other).data());
}

#[test]
fn san_equal_inputs_are_a_fixed_point() {
    let mut store = ParamStore::new();
    let san = San::new(&mut store, "san", 4, 3, &mut rng()).unwrap();
    let mut tape = Tape::new(&store);
    let v = Tensor::from_rows(&[vec![0.5, 1.5], vec![-2.0, 0.0]]).unwrap();
    let others: Vec<Var> = (0..3).map(|_| tape.input(v.clone())).collect();
    let (a, _) = san.forward(&mut tape, 2, &others).unwrap();
    assert_close(tape.value(a).data(), v.data(), 1e-15);
}

#[test]
fn san_three_scenarios_hand_arithmetic() {
    let mut store = ParamStore::new();
    // Scenario 1 attends to [0, 2]; logits [ln 1, ln 4] → weights [0.2, 0.8].
    let san = san_with_logits(&mut store, 3, 1, &[0.0, 4f64.ln()]);
    let mut tape = Tape::new(&store);
    let s0 = tape.input(Tensor::from_rows(&[vec![1.0, 10.0]]).unwrap());
    let s2 = tape.input(Tensor::from_rows(&[vec![-5.0, 0.5]]).unwrap());
    let (a, w) = san.forward(&mut tape, 1, &[s0, s2]).unwrap();
    assert_close(tape.value(w).data(), &[0.2, 0.8], 1e-15);
    assert_close(tape.value(a).data(), &[0.2 * 1.0 + 0.8 * -5.0, 0.2 * 10.0 + 0.8 * 0.5], 1e-14);
    assert_eq!(other_scenarios(1, 3), vec![0, 2]);
}

#[test]
fn san_rejects_wrong_number_of_others() {
    let mut store = ParamStore::new();
    let san = San::new(&mut store, "san", 3, 2, &mut rng()).unwrap();
    let mut tape = Tape::new(&store);
    let s = tape.input(Tensor::from_rows(&[vec![1.0]]).unwrap());
    assert!(matches!(san.forward(&mut tape, 0, &[s]), Err(Error::Shape { .. })));
}

#[test]
fn san_weights_depend_only_on_scenario() {
    let mut store = ParamStore::new();
    let spec = ScenarioLayerSpec {
        scenarios: 3,
        in_width: 4,
        shared_sub_experts: 2,
        specific_sub_experts: 2,
        hidden: &[],
        expert_width: 3,
        scenario_embedding_dim: 2,
        gated: true,
        san: true,
    };
    let layer = ScenarioLayer::new(&mut store, "sc", &spec, &mut rng()).unwrap();
    let mut tape = Tape::new(&store);
    let x1 = tape.input(Tensor::from_rows(&[vec![1.0, 0.0, -1.0, 2.0]]).unwrap());
    let x2 = tape.input(Tensor::from_rows(&[vec![-3.0, 0.4, 0.1, 0.0], vec![0.2, 0.2, 0.2, 0.2]]).unwrap());
    let o1 = layer.forward(&mut tape, x1, 2).unwrap();
    let o2 = layer.forward(&mut tape, x2, 2).unwrap();
    assert_eq!(
        tape.value(o1.san_weights.unwrap()).data(),
        tape.value(o2.san_weights.unwrap()).data()
    );
}

fn layer_spec(scenarios: usize, san: bool) -> ScenarioLayerSpec<'static> {
    ScenarioLayerSpec {
        scenarios,
        in_width: 4,
        shared_sub_experts: 2,
        specific_sub_experts: 2,
        hidden: &[],
        expert_width: 3,
        scenario_embedding_dim: 2,
        gated: true,
        san,
    }
}

#[test]
fn scenario_layer_widths() {
    let mut store = ParamStore::new();
    let full = ScenarioLayer::new(&mut store, "full", &layer_spec(3, true), &mut rng()).unwrap();
    let no_san = ScenarioLayer::new(&mut store, "nosan", &layer_spec(3, false), &mut rng()).unwrap();
    let single = ScenarioLayer::new(&mut store, "single", &layer_spec(1, true), &mut rng()).unwrap();
    assert!(single.san.is_none());
    assert_eq!(full.out_width(), 9);
    assert_eq!(no_san.out_width(), 6);
    assert_eq!(single.out_width(), 6);

    // Attention gate is (M − 1) × d.
    let gate = store.value(full.san.as_ref().unwrap().gates[0].weight.unwrap());
    assert_eq!(gate.shape(), &[2, 2]);

    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_rows(&vec![vec![0.1, 0.2, 0.3, 0.4]; 5]).unwrap());
    for (layer, width) in [(&full, 9), (&no_san, 6), (&single, 6)] {
        let out = layer.forward(&mut tape, x, 0).unwrap();
        assert_eq!(tape.value(out.c).shape(), &[5, width]);
    }
    assert!(matches!(full.forward(&mut tape, x, 3), Err(Error::Index { .. })));
}

#[test]
fn attention_carries_gradient_to_other_scenarios() {
    let x = Tensor::from_rows(&[vec![0.5, -0.2, 0.8, 0.1], vec![-0.3, 0.9, 0.2, 0.4]]).unwrap();
    for san in [true, false] {
        let mut store = ParamStore::new();
        let layer = ScenarioLayer::new(&mut store, "sc", &layer_spec(3, san), &mut rng()).unwrap();
        // A weight inside scenario 2's private sub-expert.
        let cross = store.id("sc.specific2.expert0.layer0.w").unwrap();
        let f = |tape: &mut Tape<'_>| {
            let xv = tape.input(x.clone());
            let out = layer.forward(tape, xv, 0)?;
            let sq = tape.mul(out.c, out.c)?;
            Ok(tape.sum(sq))
        };
        let mut tape = Tape::new(&store);
        let loss = f(&mut tape).unwrap();
        let mut grads = GradStore::for_store(&store);
        tape.backward(loss, &mut grads).unwrap();
        let reached = grads.get(cross).iter().any(|&g| g != 0.0);
        assert_eq!(reached, san, "san={san}");

        if san {
            let report = grad_check(&store, cross, f, &GradCheckOptions::default()).unwrap();
            assert!(report.checked > 0);
            assert!(report.max_rel_error < 1e-5, "{report:?}");
        }
        // The shared SEI path is present either way.
        let shared = store.id("sc.shared.expert0.layer0.w").unwrap();
        assert!(grads.get(shared).iter().any(|&g| g != 0.0));
    }
}

#[test]
fn cgc_single_task_expert() {
    let mut store = ParamStore::new();
    let cgc = CgcModule::new(&mut store, "cgc", 3, 0, &[1], &[], 2, true, &mut rng()).unwrap();
    let mut tape = Tape::new(&store);
    let c = tape.input(Tensor::from_rows(&[vec![0.2, -0.1, 0.7]]).unwrap());
    let out = cgc.forward(&mut tape, c, 0).unwrap();
    let direct = cgc.task_experts[0][0].forward(&mut tape, c).unwrap();
    assert_eq!(tape.value(out.output), tape.value(direct));
}

#[test]
fn cgc_identical_experts() {
    let mut store = ParamStore::new();
    let cgc = CgcModule::new(&mut store, "cgc", 2, 2, &[2, 1], &[], 2, true, &mut rng()).unwrap();
    let w = vec![vec![1.0, -0.5], vec![0.3, 0.8]];
    for name in ["cgc.shared0", "cgc.shared1", "cgc.task0.expert0", "cgc.task0.expert1", "cgc.task1.expert0"] {
        set(&mut store, &format!("{name}.layer0.w"), &w);
        set(&mut store, &format!("{name}.layer0.b"), &[vec![0.05, 0.0]]);
    }
    let mut tape = Tape::new(&store);
    let c = tape.input(Tensor::from_rows(&[vec![0.9, 0.4], vec![-1.0, 2.0]]).unwrap());
    let common = cgc.shared_experts[0].forward(&mut tape, c).unwrap();
    for out in cgc.forward_all(&mut tape, c).unwrap() {
        assert_close(tape.value(out.output).data(), tape.value(common).data(), 1e-15);
    }
}

#[test]
fn cgc_two_term_hand_combination() {
    let mut store = ParamStore::new();
    let cgc = CgcModule::new(&mut store, "cgc", 2, 1, &[1], &[], 2, true, &mut rng()).unwrap();
    set(&mut store, "cgc.shared0.layer0.w", &[vec![1.0, 0.0], vec![0.0, 0.0]]);
    set(&mut store, "cgc.shared0.layer0.b", &[vec![0.0, 0.0]]);
    set(&mut store, "cgc.task0.expert0.layer0.w", &[vec![0.0, 0.0], vec![0.0, 2.0]]);
    set(&mut store, "cgc.task0.expert0.layer0.b", &[vec![0.0, 0.0]]);
    // logits [ln 2, 0] on c = [1, 1] → weights [2/3, 1/3]; order is shared then task.
    set(&mut store, "cgc.task0.gate.w", &[vec![2f64.ln(), 0.0], vec![0.0, 0.0]]);
    let mut tape = Tape::new(&store);
    let c = tape.input(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
    let out = cgc.forward(&mut tape, c, 0).unwrap();
    assert_close(tape.value(out.gate_weights).data(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15);
    assert_close(tape.value(out.output).data(), &[2.0 / 3.0, 2.0 / 3.0], 1e-15);
}

#[test]
fn cgc_config_errors_and_gate_shape() {
    let mut store = ParamStore::new();
    assert!(matches!(
        CgcModule::new(&mut store, "bad", 4, 0, &[0], &[], 2, true, &mut rng()),
        Err(Error::Config(_))
    ));
    let cgc = CgcModule::new(&mut store, "cgc", 9, 2, &[2, 3], &[], 4, true, &mut rng()).unwrap();
    assert_eq!(store.value(cgc.gates[0].weight.unwrap()).shape(), &[4, 9]);
    assert_eq!(store.value(cgc.gates[1].weight.unwrap()).shape(), &[5, 9]);
    let mut tape = Tape::new(&store);
    let c = tape.input(Tensor::zeros(vec![1, 9]));
    assert!(matches!(cgc.forward(&mut tape, c, 2), Err(Error::Index { .. })));
}

#[test]
fn tower_examples() {
    let mut store = ParamStore::new();
    let tower = Mlp::new(&mut store, "tower", &[3, 2, 1], false, &mut rng()).unwrap();
    let mut zeroed = store.clone();
    zeroed.fill_all(0.0);
    let mut tape = Tape::new(&zeroed);
    let t = tape.input(Tensor::from_rows(&[vec![5.0, -3.0, 1.0]]).unwrap());
    let p = tower_forward(&mut tape, &tower, t).unwrap();
    assert_eq!(tape.value(p).data(), &[0.5]);

    // Hand forward: h = relu([[1,0,1],[0,-1,0]]·t + [0.5, 0]) ; logit = [2, -1]·h − 1
    set(&mut store, "tower.layer0.w", &[vec![1.0, 0.0, 1.0], vec![0.0, -1.0, 0.0]]);
    set(&mut store, "tower.layer0.b", &[vec![0.5, 0.0]]);
    set(&mut store, "tower.layer1.w", &[vec![2.0, -1.0]]);
    set(&mut store, "tower.layer1.b", &[vec![-1.0]]);
    let mut tape = Tape::new(&store);
    let t = tape.input(Tensor::from_rows(&[vec![0.2, 0.3, -0.4], vec![100.0, -100.0, 100.0]]).unwrap());
    let p = tower_forward(&mut tape, &tower, t).unwrap();
    // Row 0: h = relu([0.3, -0.3]) = [0.3, 0]; logit = -0.4.
    let expected0 = 1.0 / (1.0 + 0.4f64.exp());
    let got = tape.value(p).data();
    assert!((got[0] - expected0).abs() < 1e-15);
    // Row 1 saturates but stays below one.
    assert!(got[1] > 0.999_999 && got[1] < 1.0);
}

#[test]
fn uniform_gate_has_no_parameters() {
    let mut store = ParamStore::new();
    let gate = GatingNetwork::new(&mut store, "g", 5, 4, false, &mut rng()).unwrap();
    assert!(store.is_empty());
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::zeros(vec![3, 5]));
    let w = gate.forward(&mut tape, x).unwrap();
    assert_eq!(tape.value(w).data(), &[0.25; 4]);
}
