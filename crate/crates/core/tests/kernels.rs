mod common;

use common::*;
use fedtensor::tensor::{
    khatri_rao, matricize, mttkrp, objective, pi_product, rmse, rmse_partitioned, squared_error, RmseScope,
};
use fedtensor::{FactorMatrix, SparseTensor};
use proptest::prelude::*;
use rand::Rng;

const EXACT: f64 = 1e-10;

fn random_shape<R: Rng>(rng: &mut R) -> Vec<usize> {
    let order = rng.random_range(2..=4);
    (0..order).map(|_| rng.random_range(1..=5)).collect()
}

#[test]
fn matricize_matches_cell_enumeration() {
    let mut rng = rng(1);
    for _ in 0..50 {
        let shape = random_shape(&mut rng);
        let t = random_tensor(&shape, 0.4, &mut rng);
        for mode in 0..shape.len() {
            let oracle = dense_unfold(&shape, mode, |idx| dense_value(&t, idx));
            assert_eq!(matricize(&t, mode).unwrap().to_dense(), oracle);
        }
    }
}

#[test]
fn single_entry_lands_in_column_one() {
    let t = SparseTensor::new(vec![2, 2, 2], vec![(vec![1, 0, 1], 1.0)]).unwrap();
    let m = matricize(&t, 2).unwrap();
    assert_eq!(m.entries, vec![(1, 1, 1.0)]);
}

#[test]
fn khatri_rao_matches_columnwise_kronecker() {
    let mut rng = rng(2);
    for _ in 0..50 {
        let rank = rng.random_range(1..4);
        let a = random_signed(rng.random_range(1..5), rank, &mut rng);
        let b = random_signed(rng.random_range(1..5), rank, &mut rng);
        let kr = khatri_rao(&a, &b).unwrap();
        assert_eq!(kr.rows(), a.rows() * b.rows());
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                for r in 0..rank {
                    assert_eq!(kr.get(i * b.rows() + j, r), a.get(i, r) * b.get(j, r));
                }
            }
        }
    }
}

#[test]
fn unfolding_identity_holds_for_random_models() {
    let mut rng = rng(3);
    for _ in 0..100 {
        let shape = random_shape(&mut rng);
        let rank = rng.random_range(1..4);
        let factors: Vec<FactorMatrix> = shape.iter().map(|&d| random_signed(d, rank, &mut rng)).collect();
        for mode in 0..shape.len() {
            let oracle = dense_unfold(&shape, mode, |idx| cp_value(&factors, idx));
            let pi = pi_product(&factors, mode).unwrap();
            let x = factors[mode].mul_transpose(&pi).unwrap();
            for (i, row) in oracle.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    assert!((x.get(i, c) - v).abs() <= EXACT, "mode {mode} cell ({i},{c})");
                }
            }
        }
    }
}

#[test]
fn rank_one_reconstruction_matches_outer_product() {
    let mut rng = rng(4);
    let factors: Vec<FactorMatrix> = [3, 4, 2].iter().map(|&d| random_factor(d, 1, &mut rng)).collect();
    let x = factors[0].mul_transpose(&pi_product(&factors, 0).unwrap()).unwrap();
    for idx in all_indices(&[3, 4, 2]) {
        let outer = factors[0].get(idx[0], 0) * factors[1].get(idx[1], 0) * factors[2].get(idx[2], 0);
        assert!((x.get(idx[0], unfold_column(&[3, 4, 2], &idx, 0)) - outer).abs() <= 1e-12);
    }
}

#[test]
fn mttkrp_matches_dense_product() {
    let mut rng = rng(5);
    for _ in 0..100 {
        let shape = random_shape(&mut rng);
        let rank = rng.random_range(1..4);
        let t = random_tensor(&shape, 0.5, &mut rng);
        let factors: Vec<FactorMatrix> = shape.iter().map(|&d| random_signed(d, rank, &mut rng)).collect();
        for mode in 0..shape.len() {
            let unfolded = dense_unfold(&shape, mode, |idx| dense_value(&t, idx));
            let pi = pi_product(&factors, mode).unwrap();
            let got = mttkrp(&t, &factors, mode).unwrap();
            for (i, row) in unfolded.iter().enumerate() {
                for r in 0..rank {
                    let want: f64 = row.iter().enumerate().map(|(c, v)| v * pi.get(c, r)).sum();
                    assert!((got.get(i, r) - want).abs() <= EXACT);
                }
            }
        }
    }
}

#[test]
fn mttkrp_with_ones_gives_row_sums() {
    let mut rng = rng(6);
    let t = random_tensor(&[2, 2, 2], 0.7, &mut rng);
    let ones: Vec<FactorMatrix> = (0..3).map(|_| FactorMatrix::filled(2, 3, 1.0)).collect();
    let got = mttkrp(&t, &ones, 1).unwrap();
    for (i, row) in dense_unfold(&[2, 2, 2], 1, |idx| dense_value(&t, idx)).iter().enumerate() {
        let sum: f64 = row.iter().sum();
        assert_eq!(got.row(i), &[sum; 3]);
    }
}

#[test]
fn rmse_matches_full_enumeration() {
    let mut rng = rng(7);
    for _ in 0..20 {
        let shape = random_shape(&mut rng);
        let t = random_tensor(&shape, 0.5, &mut rng);
        let factors: Vec<FactorMatrix> = shape.iter().map(|&d| random_factor(d, 1, &mut rng)).collect();
        let cells: usize = shape.iter().product();
        let want = (dense_squared_error(&factors, &t) / cells as f64).sqrt();
        assert!((rmse(&model(factors), &t).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn rmse_of_zero_model_on_one_cell() {
    let t = SparseTensor::new(vec![2, 2, 2], vec![(vec![0, 1, 0], 2.0)]).unwrap();
    let zero = model((0..3).map(|_| FactorMatrix::zeros(2, 1)).collect());
    assert!((rmse(&zero, &t).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn objective_matches_dense_sum_and_separates() {
    let mut rng = rng(8);
    let shape = [6, 4, 3];
    let t = random_tensor(&shape, 0.5, &mut rng);
    let feature: Vec<FactorMatrix> = shape[1..].iter().map(|&d| random_factor(d, 2, &mut rng)).collect();
    let patients = random_factor(6, 2, &mut rng);
    let lambda = 0.3;

    let mut all = vec![patients.clone()];
    all.extend(feature.iter().cloned());
    let penalty: f64 = feature
        .iter()
        .map(|a| {
            let g = a.gram();
            let mut s = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    let d = if p == q { 1.0 } else { 0.0 } - g.get(p, q);
                    s += d * d;
                }
            }
            0.5 * lambda * s
        })
        .sum();
    let whole = objective(&[model(all.clone())], std::slice::from_ref(&t), &feature, lambda).unwrap();
    assert!((whole - (dense_squared_error(&all, &t) + penalty)).abs() <= EXACT);

    // split patients 0..2 and 2..6 into two shards
    let split = |lo: usize, hi: usize| {
        let entries = t
            .entries()
            .filter(|(i, _)| (lo..hi).contains(&i[0]))
            .map(|(i, v)| (vec![i[0] - lo, i[1], i[2]], v))
            .collect();
        let shard = SparseTensor::new(vec![hi - lo, 4, 3], entries).unwrap();
        let rows: Vec<Vec<f64>> = (lo..hi).map(|i| patients.row(i).to_vec()).collect();
        let mut f = vec![FactorMatrix::from_rows(&rows).unwrap()];
        f.extend(feature.iter().cloned());
        (shard, model(f))
    };
    let (s0, m0) = split(0, 2);
    let (s1, m1) = split(2, 6);
    let parts = objective(&[m0, m1], &[s0, s1], &feature, lambda).unwrap();
    assert!((parts - whole).abs() <= EXACT * whole.max(1.0));
}

#[test]
fn partitioned_rmse_pools_cells() {
    let mut rng = rng(9);
    let t = random_tensor(&[4, 3, 2], 0.6, &mut rng);
    let f: Vec<FactorMatrix> = [4, 3, 2].iter().map(|&d| random_factor(d, 2, &mut rng)).collect();
    let m = model(f);
    let pooled = rmse_partitioned(std::slice::from_ref(&m), std::slice::from_ref(&t), RmseScope::AllCells).unwrap();
    assert_eq!(pooled, rmse(&m, &t).unwrap());
    assert!(squared_error(&m, &t).unwrap() >= 0.0);
}

proptest! {
    #[test]
    fn rmse_ignores_entry_order(seed in any::<u64>(), rot in 0usize..50) {
        let mut rng = rng(seed);
        let t = random_tensor(&[4, 3, 3], 0.5, &mut rng);
        let f: Vec<FactorMatrix> = [4, 3, 3].iter().map(|&d| random_factor(d, 2, &mut rng)).collect();
        let m = model(f);
        let n = t.nnz();
        prop_assume!(n > 0);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).rev().collect();
        let shuffled = t.reorder_entries(&perm).unwrap();
        let a = rmse(&m, &t).unwrap();
        let b = rmse(&m, &shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn mttkrp_property_small_tensors(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let shape = random_shape(&mut rng);
        let t = random_tensor(&shape, 0.3, &mut rng);
        let factors: Vec<FactorMatrix> = shape.iter().map(|&d| random_signed(d, 2, &mut rng)).collect();
        let mode = rng.random_range(0..shape.len());
        let via_matrix = matricize(&t, mode).unwrap().matmul(&pi_product(&factors, mode).unwrap()).unwrap();
        prop_assert!(mttkrp(&t, &factors, mode).unwrap().max_abs_diff(&via_matrix) <= EXACT);
    }
}
