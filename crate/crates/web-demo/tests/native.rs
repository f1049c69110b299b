use tactile_rag_web::{collapse, schedule, RetrievalDemo};

#[test]
fn schedule_ramps_then_decays() {
    let lr = schedule(3e-4, 60, 10, true).unwrap();
    assert_eq!(lr.len(), 60);
    assert!((lr[0] - 3e-5).abs() < 1e-15);
    assert!((lr[9] - 3e-4).abs() < 1e-15);
    assert!(lr[59] < lr[30] && lr[30] < lr[10]);
    assert!(schedule(1e-3, 5, 6, true).is_err());
    assert!(schedule(1e-3, 5, 0, false).unwrap().iter().all(|&x| x == 1e-3));
}

#[test]
fn retrieval_demo_lists_k_hits_and_five_precisions() {
    let demo = RetrievalDemo::build(1).unwrap();
    let text = demo.lines(3, "fused", "text", 4).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(demo.lines(0, "sideways", "text", 4).is_err());
    let p = demo.precisions(5).unwrap();
    assert_eq!(p.len(), 5);
    assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn full_loss_spreads_queries_more_than_alignment_only() {
    let t = collapse(12, 256, 2).unwrap();
    assert_eq!(t.full_loss().len(), 12);
    assert!(t.full_spread() < t.align_spread());
}
