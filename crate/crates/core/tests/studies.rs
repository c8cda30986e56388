use gsm_core::study::{run_study, StudyId, StudyOptions, StudyReport};

fn desk(id: StudyId) -> StudyReport {
    let opts = StudyOptions { reps: 200, seed: 20240101, sizes: Some(vec![1000]), signals: Some(vec![]), ..Default::default() };
    run_study(id, &opts).unwrap()
}

fn assert_asd_tracks_sd(r: &StudyReport) {
    assert_eq!(r.failures, 0);
    for p in &r.params {
        let ratio = p.asd / p.sd;
        assert!((ratio - 1.0).abs() < 0.25, "{}: ASD {:.4} SD {:.4}", p.name, p.asd, p.sd);
    }
}

#[test]
fn cmp_sandwich_tracks_sampling_sd() {
    assert_asd_tracks_sd(&desk(StudyId::TableS2));
}

#[test]
fn truncgauss_sandwich_tracks_sampling_sd() {
    assert_asd_tracks_sd(&desk(StudyId::TableS1));
}
