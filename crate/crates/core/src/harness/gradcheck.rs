//! The gradient-check suite behind `gradcheck` and the acceptance gate:
//! every primitive, every energy variant, every loss, against central
//! finite differences at fixed seeds.

use rand::Rng as _;

use crate::data::Example;
use crate::energy::{
    CnnScorer, EnergyModel, GeVariant, GlobalTlmTerm, HighOrderScorer, MlcEnergy, SelfAttScorer,
    StructuredTerm, VkpScorer, WindowTlmScorer,
};
use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::params::Params;
use crate::rng;
use crate::tape::Value;
use crate::tensor::Tensor;
use crate::train::{crf_cll_loss, delta_cost, entropy_reg, hinge_loss, local_ce_loss, LossKind};

#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_err: f64,
}

const EPS: f64 = 1e-5;

fn simplex_row(l: usize, rng: &mut rng::Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..l).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn insert_y_rows(params: &mut Params, t_len: usize, l: usize, seed: u64) {
    let mut rng = rng::stream(seed, "gradcheck-y");
    for t in 0..t_len {
        params.insert(format!("y.t{t}"), Tensor::vector(simplex_row(l, &mut rng)));
    }
}

fn y_rows(bound: &crate::params::BoundParams, t_len: usize) -> Vec<Value> {
    (0..t_len).map(|t| bound.get(&format!("y.t{t}")).clone()).collect()
}

fn check_sequence_energy(name: &str, term: StructuredTerm) -> Result<CheckRow> {
    let (l, t_len, vocab) = (3usize, 4usize, 6usize);
    let model = EnergyModel::new("energy", l, vocab, 3, 4, term)?;
    let mut params = Params::new();
    model.init(&mut params, &mut rng::stream(42, "init"));
    insert_y_rows(&mut params, t_len, l, 7);
    let tokens = [1usize, 4, 2, 5];
    let err = grad_check(&params, EPS, |tape, b| {
        let rows = y_rows(b, t_len);
        model
            .energy(b, tape, &tokens, &rows)
            .expect("energy evaluates on valid inputs")
    })?;
    Ok(CheckRow { name: name.to_string(), max_rel_err: err })
}

/// Every check in the suite; tolerances are applied by the caller.
pub fn gradient_suite() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();

    // ---- primitives ------------------------------------------------
    let prim = |name: &str,
                shape: Vec<usize>,
                f: &dyn Fn(&std::rc::Rc<crate::tape::Tape>, &Value) -> Value|
     -> Result<CheckRow> {
        let mut rng = rng::stream(5, "gradcheck-prim");
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut params = Params::new();
        params.insert("x", Tensor::new(shape, data));
        let err = grad_check(&params, EPS, |tape, b| f(tape, b.get("x")))?;
        Ok(CheckRow { name: format!("primitive/{name}"), max_rel_err: err })
    };
    rows.push(prim("add-mul-sub", vec![2, 3], &|t, x| {
        let c = t.vector(&[0.3, -1.0, 2.0, 0.7, 0.1, -0.4]).reshape(vec![2, 3]);
        x.add(&c).mul(x).sub(&c.scale(0.5)).sum()
    })?);
    rows.push(prim("matmul-transpose", vec![2, 3], &|t, x| {
        let c = t.vector(&[0.2, -0.8, 1.1, 0.4, -0.6, 0.9]).reshape(vec![2, 3]);
        x.matmul(&c.transpose()).sum()
    })?);
    rows.push(prim("matvec-dot", vec![2, 3], &|t, x| {
        let v = t.vector(&[0.5, -1.2, 0.8]);
        let u = t.vector(&[1.5, -0.3]);
        x.matvec(&v).dot(&u)
    })?);
    rows.push(prim("vecmat", vec![3], &|t, x| {
        let m = t.vector(&[0.1, 0.9, -0.7, 0.2, 1.3, -0.5]).reshape(vec![3, 2]);
        x.vecmat(&m).sum()
    })?);
    rows.push(prim("concat-slice", vec![4], &|t, x| {
        let y = t.vector(&[0.4, -0.2]);
        Value::concat(&[x.slice(1, 2), y]).mul(&t.vector(&[1.0, 2.0, 3.0, 4.0])).sum()
    })?);
    rows.push(prim("stack-rows-row", vec![3], &|t, x| {
        let y = t.vector(&[0.2, 0.5, -0.1]);
        Value::stack_rows(&[x.clone(), y]).row(0).sum()
    })?);
    rows.push(prim("softmax", vec![2, 3], &|t, x| {
        x.softmax().mul(&t.vector(&[1.0, -2.0, 0.5, 0.3, 1.1, -0.7]).reshape(vec![2, 3])).sum()
    })?);
    rows.push(prim("logsumexp", vec![2, 4], &|_t, x| x.logsumexp().sum())?);
    rows.push(prim("log-exp", vec![3], &|_t, x| x.exp().log().sum())?);
    rows.push(prim("safe-log", vec![3], &|_t, x| x.exp().safe_log().sum())?);
    rows.push(prim("relu-shifted", vec![4], &|t, x| {
        // Keep pre-activations away from the kink.
        x.add(&t.vector(&[5.0, 5.0, -5.0, -5.0])).relu().sum()
    })?);
    rows.push(prim("tanh-sigmoid", vec![4], &|_t, x| x.tanh().sigmoid().sum())?);
    rows.push(prim("mean", vec![5], &|_t, x| x.mean())?);
    rows.push(prim("embed-row", vec![3, 2], &|t, x| {
        x.embed_row(1).dot(&t.vector(&[0.7, -0.4]))
    })?);
    rows.push(prim("layer-norm", vec![4], &|t, x| {
        let gain = t.vector(&[1.1, 0.9, 1.0, 1.2]);
        let bias = t.vector(&[0.0, 0.1, -0.1, 0.2]);
        x.layer_norm(&gain, &bias).mul(&t.vector(&[1.0, 2.0, -1.0, 0.5])).sum()
    })?);
    rows.push(prim("add-row-broadcast", vec![2, 3], &|t, x| {
        x.add_row(&t.vector(&[0.3, -0.6, 0.2])).sum()
    })?);
    rows.push(prim("reshape", vec![6], &|t, x| {
        x.reshape(vec![2, 3]).matvec(&t.vector(&[0.4, 1.0, -0.9])).sum()
    })?);

    // ---- energy variants --------------------------------------------
    rows.push(check_sequence_energy("energy/linear-chain", StructuredTerm::LinearChain)?);
    rows.push(check_sequence_energy("energy/skip-chain-m2", StructuredTerm::SkipChain { window: 2 })?);
    rows.push(check_sequence_energy("energy/skip-chain-m3", StructuredTerm::SkipChain { window: 3 })?);
    rows.push(check_sequence_energy(
        "energy/vkp-m2",
        StructuredTerm::HighOrder(HighOrderScorer::Vkp(VkpScorer::new("energy.ho", 3, 2, 4)?)),
    )?);
    rows.push(check_sequence_energy(
        "energy/cnn-m2",
        StructuredTerm::HighOrder(HighOrderScorer::Cnn(CnnScorer::new("energy.ho", 3, 2, 5))),
    )?);
    rows.push(check_sequence_energy(
        "energy/window-tlm-m2",
        StructuredTerm::HighOrder(HighOrderScorer::Tlm(WindowTlmScorer::new(
            "energy.ho",
            3,
            2,
            3,
            4,
        ))),
    )?);
    rows.push(check_sequence_energy(
        "energy/satt-m2",
        StructuredTerm::HighOrder(HighOrderScorer::SelfAtt(SelfAttScorer::new(
            "energy.ho",
            3,
            2,
            1,
        )?)),
    )?);
    rows.push(check_sequence_energy(
        "energy/fully-connected-r4",
        StructuredTerm::FullyConnected { window: 3, rank: 4 },
    )?);
    rows.push(check_sequence_energy(
        "energy/global-tlm",
        StructuredTerm::GlobalTlm(GlobalTlmTerm::new(
            "energy.ge",
            3,
            3,
            4,
            GeVariant::B,
            0.0,
            1.0,
            None,
        )?),
    )?);

    // MLC energy: gradients with respect to y (inside the hypercube) and
    // all parameters.
    {
        let m = MlcEnergy::new("mlc", 4, 5, 4, 3);
        let mut params = Params::new();
        m.init(&mut params, &mut rng::stream(21, "init"));
        let mut yr = rng::stream(22, "gradcheck-y");
        let y: Vec<f64> = (0..4).map(|_| yr.gen_range(0.2..0.8)).collect();
        params.insert("y", Tensor::vector(y));
        let x = [0.4, -0.7, 1.2, 0.0, 0.3];
        let err = grad_check(&params, EPS, |tape, b| {
            m.energy(b, tape, &x, b.get("y")).expect("valid MLC inputs")
        })?;
        rows.push(CheckRow { name: "energy/mlc".into(), max_rel_err: err });
    }

    // ---- losses -------------------------------------------------------
    for (kind, name) in [
        (LossKind::MarginRescaled, "loss/hinge-margin"),
        (LossKind::SlackRescaled, "loss/hinge-slack"),
        (LossKind::Perceptron, "loss/hinge-perceptron"),
        (LossKind::Contrastive, "loss/hinge-contrastive"),
    ] {
        // Points with the hinge strictly active, away from the kink.
        let mut params = Params::new();
        params.insert("delta", Tensor::scalar(1.7));
        params.insert("e_pred", Tensor::scalar(-0.9));
        params.insert("e_gold", Tensor::scalar(-0.3));
        let err = grad_check(&params, EPS, |tape, b| {
            hinge_loss(tape, kind, b.get("delta"), b.get("e_pred"), b.get("e_gold"))
        })?;
        rows.push(CheckRow { name: name.into(), max_rel_err: err });
    }
    {
        // Local CE with respect to the predicted distributions.
        let mut params = Params::new();
        insert_y_rows(&mut params, 3, 4, 31);
        let gold = crate::tensor::RelaxedLabelSeq::one_hot(&[2, 0, 3], 4);
        let err = grad_check(&params, EPS, |tape, b| {
            let dists = y_rows(b, 3);
            let gold_rows = crate::nets::const_rows(tape, gold.rows());
            local_ce_loss(&gold_rows, &dists).expect("aligned")
        })?;
        rows.push(CheckRow { name: "loss/local-ce".into(), max_rel_err: err });
    }
    {
        // L1 cost, rows kept away from the |.| kink.
        let mut params = Params::new();
        insert_y_rows(&mut params, 3, 4, 33);
        let mut rng = rng::stream(34, "gradcheck-y");
        let other: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(1.5..2.5)).collect())
            .collect();
        let err = grad_check(&params, EPS, |tape, b| {
            let a = y_rows(b, 3);
            let bb = crate::nets::const_rows(tape, &other);
            delta_cost(&a, &bb).expect("aligned")
        })?;
        rows.push(CheckRow { name: "loss/delta-l1".into(), max_rel_err: err });
    }
    {
        let mut params = Params::new();
        insert_y_rows(&mut params, 3, 4, 35);
        let err = grad_check(&params, EPS, |_tape, b| entropy_reg(&y_rows(b, 3)))?;
        rows.push(CheckRow { name: "loss/entropy".into(), max_rel_err: err });
    }
    {
        // CRF conditional log-likelihood through the forward algorithm,
        // with respect to U, W and the feature encoder.
        let model = EnergyModel::new("energy", 3, 6, 3, 4, StructuredTerm::LinearChain)?;
        let mut params = Params::new();
        model.init(&mut params, &mut rng::stream(51, "init"));
        let batch = vec![
            Example { tokens: vec![1, 4, 2], labels: vec![0, 2, 1] },
            Example { tokens: vec![5, 0], labels: vec![1, 1] },
        ];
        let err = grad_check(&params, EPS, |tape, b| {
            crf_cll_loss(&model, b, tape, &batch).expect("chain energy")
        })?;
        rows.push(CheckRow { name: "loss/crf-cll".into(), max_rel_err: err });
    }
    Ok(rows)
}
