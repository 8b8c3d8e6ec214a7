mod common;

use kwattn::model::DecoderOrder;

#[test]
fn finite_differences_match_both_orders() {
    for order in [DecoderOrder::CrossThenSelf, DecoderOrder::SelfThenCross] {
        let model = common::grad_check_model(order, 17);
        let errors = common::finite_difference_errors(&model, &common::grad_check_example(), 1e-5);
        let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
        for (name, e) in &errors {
            assert!(*e <= 1e-4, "{order}: {name} relative error {e:e}");
        }
        println!("{order}: {} groups, worst relative error {worst:e}", errors.len());
    }
}

