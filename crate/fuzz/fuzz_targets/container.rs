// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary artifact container: framing, section table, checksums.

#![no_main]

use libfuzzer_sys::fuzz_target;
use unlearn_audit::container::Container;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        let bytes = c.to_bytes().expect("decoded container re-encodes");
        let again = Container::from_bytes(&bytes).expect("re-encoded container decodes");
        assert_eq!(again.to_bytes().unwrap(), bytes);
    }
});
