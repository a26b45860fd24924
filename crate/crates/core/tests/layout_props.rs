use proptest::prelude::*;
use rope_idalign::layout::{
    candidate_set, fit_with_padding, select_resolution, selection_score, unpad_grid, Resolution,
    SelectionRule,
};

fn res() -> impl Strategy<Value = Resolution> {
    (1u32..3000, 1u32..3000).prop_map(|(h, w)| Resolution::new(h, w).unwrap())
}

proptest! {
    #[test]
    fn placement_fits_and_keeps_aspect(input in res(), target in res()) {
        let p = fit_with_padding(input, target);
        prop_assert!(p.offset_top + p.scaled.height <= target.height);
        prop_assert!(p.offset_left + p.scaled.width <= target.width);
        let s = (target.height as f64 / input.height as f64).min(target.width as f64 / input.width as f64);
        prop_assert!((p.scaled.height as f64 - input.height as f64 * s).abs() <= 1.0);
        prop_assert!((p.scaled.width as f64 - input.width as f64 * s).abs() <= 1.0);
    }

    #[test]
    fn unpad_bounded_by_full_grid(input in res(), side in 1u32..6, patch in prop::sample::select(vec![14u32, 16, 28])) {
        let target = Resolution::new(side * patch * 4, (side + 1) * patch * 3).unwrap();
        let p = fit_with_padding(input, target);
        let grid = unpad_grid(&p, patch).unwrap();
        let (full_rows, full_cols) = ((target.height / patch) as usize, (target.width / patch) as usize);
        prop_assert!(grid.rows <= full_rows && grid.cols <= full_cols);
        // A row or column is only dropped when a whole patch of padding sits on one side.
        let bottom = target.height - p.offset_top - p.scaled.height;
        let right = target.width - p.offset_left - p.scaled.width;
        prop_assert_eq!(grid.rows < full_rows, p.offset_top >= patch || bottom >= patch);
        prop_assert_eq!(grid.cols < full_cols, p.offset_left >= patch || right >= patch);
        if p.scaled.height == target.height {
            prop_assert_eq!(grid.rows, full_rows);
        }
        if p.scaled.width == target.width {
            prop_assert_eq!(grid.cols, full_cols);
        }
    }

    #[test]
    fn selection_is_stable_under_shuffles(
        input in res(),
        vit in 100u32..500,
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let candidates = candidate_set(Resolution::square(vit).unwrap());
        let shuffled: Vec<_> = perm.iter().map(|&i| candidates[i]).collect();
        let a = select_resolution(input, &candidates).unwrap();
        let b = select_resolution(input, &shuffled).unwrap();
        if a != b {
            let rule = SelectionRule::ContentArea;
            prop_assert_eq!(selection_score(input, a, rule), selection_score(input, b, rule));
        }
    }
}
