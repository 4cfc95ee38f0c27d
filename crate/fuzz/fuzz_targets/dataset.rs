// SPDX-License-Identifier: MIT OR Apache-2.0

#![no_main]

use libfuzzer_sys::fuzz_target;
use unlearn_audit::data::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::from_bytes(data) {
        assert!(ds.labels.iter().all(|&y| y < ds.num_classes));
        assert_eq!(ds.inputs.rows(), ds.labels.len());
        let back = Dataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
        assert_eq!(back.labels, ds.labels);
    }
});
