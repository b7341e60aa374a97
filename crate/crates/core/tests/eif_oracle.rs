use ipm_tmle::demography::{dominant_eigs, TargetKind};
use ipm_tmle::influence::{gateaux_oracle, influence_tables, random_law, Functional};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Max over support of |closed form - oracle| / max |oracle|, and |E psi|.
fn agreement(kind: TargetKind, n: usize, n_envs: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = random_law(&mut rng, n, n_envs);
    let model = law.to_model(None);
    let eig = dominant_eigs(&model.kernel(None)).unwrap();
    let tables = influence_tables(kind, &model, &eig).unwrap();
    let (mut diff, mut scale, mut mean) = (0.0f64, 0.0f64, 0.0);
    for (atom, &p) in law.atoms.iter().zip(&law.probs) {
        let psi = tables.evaluate(&atom.observation()).psi_total;
        let oracle = gateaux_oracle(Functional::Target(kind), &law, atom, 1e-6).unwrap().derivative;
        diff = diff.max((psi - oracle).abs());
        scale = scale.max(oracle.abs());
        mean += p * psi;
    }
    (diff / scale, mean.abs())
}

#[test]
fn closed_forms_match_the_oracle() {
    for (kind, envs, tol) in [
        (TargetKind::Lambda, 1, 1e-4),
        (TargetKind::Elasticity, 1, 1e-3),
        (TargetKind::LogLambdaS, 2, 1e-4),
        (TargetKind::Lambda, 2, 1e-4),
        (TargetKind::Elasticity, 2, 1e-3),
    ] {
        for n in 2..=4 {
            for seed in 0..5 {
                let (rel, mean) = agreement(kind, n, envs, seed * 31 + n as u64);
                assert!(rel < tol, "{kind:?} n={n} envs={envs} seed={seed}: rel err {rel:e}");
                assert!(mean < 1e-10, "{kind:?} n={n}: mean {mean:e}");
            }
        }
    }
}
