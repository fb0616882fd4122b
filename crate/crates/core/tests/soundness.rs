mod common;

use decoykit::sources::ProtocolFamily;
use proptest::prelude::*;

use common::{representative, soundness_violations};

#[test]
fn table_points_are_sound_at_110_km() {
    for family in ProtocolFamily::ALL {
        let v = soundness_violations(family, &representative(family), 110.0);
        assert!(v.is_empty(), "{v:#?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn bounds_are_sound_at_any_distance(idx in 0usize..5, distance in 0.0f64..160.0) {
        let family = ProtocolFamily::ALL[idx];
        let v = soundness_violations(family, &representative(family), distance);
        prop_assert!(v.is_empty(), "{:#?}", v);
    }
}
