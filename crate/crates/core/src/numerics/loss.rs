/// `|ŷ − y|` and its derivative in `ŷ`, with `sign(0) = 0`.
pub fn l1_loss(pred: f64, target: f64) -> (f64, f64) {
    let d = pred - target;
    let grad = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    (d.abs(), grad)
}
