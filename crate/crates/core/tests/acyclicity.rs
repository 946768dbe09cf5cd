mod common;

#[test]
fn dfs_oracle_small_graphs() {
    assert!(!common::has_cycle(&[false, true, false, false], 2));
    assert!(common::has_cycle(&[false, true, true, false], 2));
    let three_cycle = [false, true, false, false, false, true, true, false, false];
    assert!(common::has_cycle(&three_cycle, 3));
}

#[test]
fn penalty_zero_exactly_on_acyclic_patterns() {
    for n in [2, 3, 4] {
        for alpha in [1.0, 1.0 / n as f64] {
            let o = common::acyclicity_brute_force(n, alpha, 17 + n as u64);
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
    }
}
