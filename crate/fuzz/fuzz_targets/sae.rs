// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use libfuzzer_sys::fuzz_target;
use unlearn_audit::sae::SaeModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(sae) = SaeModel::from_bytes(data) {
        assert!(sae.m() > sae.d());
        assert!(sae.k() >= 1 && sae.k() <= sae.m());
        let back = SaeModel::from_bytes(&sae.to_bytes().unwrap()).unwrap();
        assert_eq!(back.m(), sae.m());
    }
});
