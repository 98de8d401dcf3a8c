#![no_main]

use convsplit::problems::image::parse_csv_grid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_csv_grid(data) {
        assert_eq!(img.data.len(), img.width * img.height);
    }
});
