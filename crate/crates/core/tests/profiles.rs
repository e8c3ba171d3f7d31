//! Measured displacement statistics keep the configured profile orderings.

use socialpose_core::pose::{self, DisplacementStats, JointId};
use socialpose_core::synthscene::{
    generate_session, RoleProfile, SceneConfig, CANVAS_HEIGHT, CANVAS_WIDTH,
};

const MARGIN: f64 = 1.2;

fn stats(cfg: &SceneConfig) -> DisplacementStats {
    let session = generate_session(cfg).unwrap();
    let scale = (CANVAS_WIDTH as f64, CANVAS_HEIGHT as f64);
    pose::displacement_stats(&session.trace, JointId::R_WRIST, scale).unwrap()
}

fn profile(p: RoleProfile, seed: u64) -> DisplacementStats {
    stats(&SceneConfig::new(p, 2000, seed))
}

#[test]
fn teacher_range_and_music_teacher_mean_dominate() {
    for seed in [1, 2, 3] {
        let t = profile(RoleProfile::TeacherLike, seed);
        let m = profile(RoleProfile::MusicianLike, seed);
        let mt = profile(RoleProfile::MusicTeacherLike, seed);
        assert!(
            t.range >= MARGIN * m.range.max(mt.range),
            "seed {seed}: {t:?} {m:?} {mt:?}"
        );
        assert!(
            mt.mean >= MARGIN * m.mean.max(t.mean),
            "seed {seed}: {t:?} {m:?} {mt:?}"
        );
    }
}

#[test]
fn four_times_burst_widens_the_range() {
    let mut cfg = SceneConfig::new(RoleProfile::TeacherLike, 2000, 5);
    cfg.gesture.burst_multiplier = 4.0;
    cfg.gesture.amplitude_px = RoleProfile::MusicianLike.gesture().amplitude_px;
    let t = stats(&cfg);
    let m = profile(RoleProfile::MusicianLike, 5);
    assert!(t.range > MARGIN * m.range, "{t:?} vs {m:?}");
}
