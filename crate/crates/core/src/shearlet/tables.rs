// Generated by tools/shearlet_tables.py. Do not edit by hand.

/// Default 9-tap maximally flat low-pass filter, centered at index 4.
pub const DEFAULT_H1: [f64; 9] = [
    0.01171875,
    -0.03125,
    -0.046875,
    0.28125,
    0.5703125,
    0.28125,
    -0.046875,
    -0.03125,
    0.01171875,
];

/// Default 17x17 fan filter (row-major), unit l1 norm, centered at (8, 8).
pub const DEFAULT_P: [f64; 289] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -6.4803102254111106e-06, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.536217157787778e-05, 0.0, 4.536217157787778e-05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.00013608651473363332, 0.0, 0.00011794164610248221, 0.0, -0.00013608651473363332, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.00022681085788938887, 0.0, -0.0012247786326027, 0.0, -0.0012247786326027, 0.0, 0.00022681085788938887, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, -0.00022681085788938887, 0.0, 0.0027670924662505443, 0.0, -0.0035836115546523445, 0.0, 0.0027670924662505443, 0.0, -0.00022681085788938887, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.00013608651473363332, 0.0, -0.0027670924662505443, 0.0, 0.017827333430105965, 0.0, 0.017827333430105965, 0.0, -0.0027670924662505443, 0.0, 0.00013608651473363332, 0.0, 0.0, 0.0,
    0.0, 0.0, -4.536217157787778e-05, 0.0, 0.0012247786326027, 0.0, -0.017827333430105965, 0.0, 0.11689831615619103, 0.0, -0.017827333430105965, 0.0, 0.0012247786326027, 0.0, -4.536217157787778e-05, 0.0, 0.0,
    0.0, 6.4803102254111106e-06, 0.0, -0.00011794164610248221, 0.0, 0.0035836115546523445, 0.0, -0.11689831615619103, 0.33975488874603404, -0.11689831615619103, 0.0, 0.0035836115546523445, 0.0, -0.00011794164610248221, 0.0, 6.4803102254111106e-06, 0.0,
    0.0, 0.0, -4.536217157787778e-05, 0.0, 0.0012247786326027, 0.0, -0.017827333430105965, 0.0, 0.11689831615619103, 0.0, -0.017827333430105965, 0.0, 0.0012247786326027, 0.0, -4.536217157787778e-05, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.00013608651473363332, 0.0, -0.0027670924662505443, 0.0, 0.017827333430105965, 0.0, 0.017827333430105965, 0.0, -0.0027670924662505443, 0.0, 0.00013608651473363332, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, -0.00022681085788938887, 0.0, 0.0027670924662505443, 0.0, -0.0035836115546523445, 0.0, 0.0027670924662505443, 0.0, -0.00022681085788938887, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.00022681085788938887, 0.0, -0.0012247786326027, 0.0, -0.0012247786326027, 0.0, 0.00022681085788938887, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.00013608651473363332, 0.0, 0.00011794164610248221, 0.0, -0.00013608651473363332, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.536217157787778e-05, 0.0, 4.536217157787778e-05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -6.4803102254111106e-06, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
];
