#include "qjlab/random.hpp"

#include <cmath>
#include <cstdlib>

namespace qjlab {

/* 128-layer ziggurat tables for the standard normal (Marsaglia & Tsang
 * constants). Built once at startup from closed-form recursions, so the
 * tables themselves are deterministic. */
namespace {

struct ZigTables {
    std::uint32_t kn[128];
    double wn[128];
    double fn[128];
    ZigTables() {
        const double m1 = 2147483648.0; /* 2^31 */
        double dn = 3.442619855899;
        const double vn = 9.91256303526217e-3;
        double tn = dn;
        double q = vn / std::exp(-0.5 * dn * dn);
        kn[0] = static_cast<std::uint32_t>((dn / q) * m1);
        kn[1] = 0;
        wn[0] = q / m1;
        wn[127] = dn / m1;
        fn[0] = 1.0;
        fn[127] = std::exp(-0.5 * dn * dn);
        for (int i = 126; i >= 1; i--) {
            dn = std::sqrt(-2.0 * std::log(vn / dn + std::exp(-0.5 * dn * dn)));
            kn[i + 1] = static_cast<std::uint32_t>((dn / tn) * m1);
            tn = dn;
            fn[i] = std::exp(-0.5 * dn * dn);
            wn[i] = dn / m1;
        }
    }
};

const ZigTables zig;
const double zig_r = 3.442619855899;

} // namespace

double Rng::normal() {
    for (;;) {
        const std::uint64_t u = eng_();
        const std::int32_t hz = static_cast<std::int32_t>(static_cast<std::uint32_t>(u >> 32));
        const unsigned iz = static_cast<unsigned>(hz) & 127u;
        const std::uint32_t mag =
            hz < 0 ? static_cast<std::uint32_t>(-static_cast<std::int64_t>(hz))
                   : static_cast<std::uint32_t>(hz);
        if (mag < zig.kn[iz]) return hz * zig.wn[iz];

        if (iz == 0) {
            /* tail beyond +-r */
            double x, y;
            do {
                x = -std::log(uniform_pos()) / zig_r;
                y = -std::log(uniform_pos());
            } while (y + y < x * x);
            return hz > 0 ? zig_r + x : -(zig_r + x);
        }
        const double x = hz * zig.wn[iz];
        if (zig.fn[iz] + uniform01() * (zig.fn[iz - 1] - zig.fn[iz]) < std::exp(-0.5 * x * x))
            return x;
        /* rejected wedge sample: redraw */
    }
}

cx Rng::normal_pair() {
    const double a = normal();
    const double b = normal();
    return {a, b};
}

double Rng::normal_boxmuller() {
    if (bm_has_cache_) {
        bm_has_cache_ = false;
        return bm_cache_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * pi * u2;
    bm_cache_ = r * std::sin(t);
    bm_has_cache_ = true;
    return r * std::cos(t);
}

} // namespace qjlab
