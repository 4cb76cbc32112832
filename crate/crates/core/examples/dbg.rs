use moe_robustness::data::*;
use moe_robustness::numeric::*;
use moe_robustness::theory::*;

fn main() {
    let (ds, part, _) = gen_orthogonal_regression(3, 3, 6, 0.05, 29).unwrap();
    let rot = random_rotation(6, 15);
    let rds = rotate_dataset(&ds, &rot).unwrap();
    println!("gram svd: {:?}", svd(&rds.x.gram()).map(|s| s.singular_values));
    println!("solve_dense: {:?}", solve_dense(&rds).map(|w| norm2(&w)));
    println!("solve_experts: {:?}", solve_experts(&rds, &part).map(|ws| ws.len()));
    match build_projectors(&rds, &part, DEFAULT_RTOL) {
        Ok(ps) => {
            println!("projectors ok");
            match separation_metrics(&rds, &part, &ps) {
                Ok(s) => println!("eps {} {}", s.eps1, s.eps2),
                Err(e) => println!("sep FAILED: {e}"),
            }
        }
        Err(e) => println!("proj FAILED: {e}"),
    }
    match theorem1_check(&rds, &part) {
        Ok(r) => println!("t1 ok holds={} slack={}", r.holds, r.slack),
        Err(e) => println!("t1 FAILED: {e}"),
    }
}
