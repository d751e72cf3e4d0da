use contact_harness::bench::bench_psi;

#[test]
fn server_cost_grows_linearly() {
    let sizes = [100, 200, 400, 800];
    let table = bench_psi(&sizes, 21).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.n).collect::<Vec<_>>(), sizes);
    assert!(table.rows.iter().all(|r| r.correct), "{}", table.render());
    let fit = table.server_fit.as_ref().unwrap();
    assert!(fit.slope > 0.0);
    assert!(fit.r_squared > 0.95, "{}", table.render());
}
