//! Small synthetic dataset for smoke tests and offline demos: 3 categories
//! with 20 offers each, every offer carrying all 5 attributes of its
//! category, and every value written verbatim into the title.

use std::collections::BTreeMap;

use crate::corpus::{Dataset, ProductOffer};

pub const TOY_OFFERS_PER_CATEGORY: usize = 20;

struct ToyCategory {
    name: &'static str,
    noun: &'static str,
    attributes: [(&'static str, &'static [&'static str]); 4],
    model_prefix: &'static str,
}

const CATEGORIES: [ToyCategory; 3] = [
    ToyCategory {
        name: "headphones",
        noun: "Headphones",
        attributes: [
            ("Brand", &["Sonora", "Klangwerk", "Auralis", "Beatline"]),
            ("Color", &["Black", "White", "Navy Blue", "Rose Gold", "Silver"]),
            ("Connectivity", &["Bluetooth 5.0", "Wired", "Bluetooth 5.3"]),
            ("Form Factor", &["Over-Ear", "On-Ear", "In-Ear"]),
        ],
        model_prefix: "HX",
    },
    ToyCategory {
        name: "running_shoes",
        noun: "Running Shoes",
        attributes: [
            ("Brand", &["Stridex", "Pacemark", "Trailon"]),
            ("Color", &["Red", "Grey", "Neon Green", "Black", "Blue"]),
            ("Size", &["EU 40", "EU 41", "EU 42", "EU 43", "EU 44", "EU 45"]),
            ("Gender", &["Men", "Women", "Unisex"]),
        ],
        model_prefix: "Run",
    },
    ToyCategory {
        name: "coffee_maker",
        noun: "Coffee Maker",
        attributes: [
            ("Brand", &["Brewmaster", "Cafetto", "Moka House", "Drip Co"]),
            ("Capacity", &["1.2 L", "1.5 L", "0.6 L", "1.8 L"]),
            ("Color", &["Stainless Steel", "Matte Black", "Cream"]),
            ("Power", &["900 W", "1000 W", "1200 W", "1500 W", "800 W"]),
        ],
        model_prefix: "CM",
    },
];

/// The toy dataset. Offer ids are `{category}-{index:02}`.
pub fn toy_dataset() -> Dataset {
    let mut offers = Vec::new();
    for category in &CATEGORIES {
        for i in 0..TOY_OFFERS_PER_CATEGORY {
            let mut truth = BTreeMap::new();
            let mut parts = Vec::new();
            for (j, (attribute, values)) in category.attributes.iter().enumerate() {
                // different strides keep the combinations varied
                let value = values[(i * (j + 1) + j) % values.len()];
                truth.insert(attribute.to_string(), value.to_string());
                parts.push(value);
            }
            let model = format!("{}-{}", category.model_prefix, 100 + 7 * i);
            truth.insert("Model".to_string(), model.clone());
            let [brand, rest @ ..] = parts.as_slice() else { unreachable!() };
            let title = format!("{brand} {model} {} - {}", category.noun, rest.join(", "));
            offers.push(
                ProductOffer::new(format!("{}-{i:02}", category.name), category.name, title, truth)
                    .expect("toy offers are valid"),
            );
        }
    }
    Dataset::new("toy", offers).expect("toy ids are unique")
}
