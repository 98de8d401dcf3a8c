#![no_main]

use convsplit::problems::image::{encode_pgm, parse_pgm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_pgm(data) {
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let back = parse_pgm(&encode_pgm(&img)).expect("encoded image decodes");
        assert_eq!((back.width, back.height), (img.width, img.height));
    }
});
