#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace uncap {

// World frame: fixed 2D Cartesian plane, East = +x, North = +y.
// Headings are radians measured counterclockwise from +x (East).
struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }

    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm() const { return std::hypot(x, y); }
};

inline double wrap_angle(double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a < -M_PI) a += 2.0 * M_PI;
    return a;
}

// Compass angle in degrees [0, 360): 0 = North, clockwise positive.
inline double heading_to_compass_deg(double heading_rad) {
    double deg = 90.0 - heading_rad * 180.0 / M_PI;
    deg = std::fmod(deg, 360.0);
    if (deg < 0) deg += 360.0;
    return deg;
}

inline double compass_bearing_deg(const Vec2& from, const Vec2& to) {
    return heading_to_compass_deg(std::atan2(to.y - from.y, to.x - from.x));
}

inline const char* compass16(double compass_deg) {
    static const char* tokens[16] = {"N",  "NNE", "NE", "ENE", "E",  "ESE",
                                     "SE", "SSE", "S",  "SSW", "SW", "WSW",
                                     "W",  "WNW", "NW", "NNW"};
    double d = std::fmod(compass_deg, 360.0);
    if (d < 0) d += 360.0;
    int idx = static_cast<int>(std::floor(d / 22.5 + 0.5)) % 16;
    return tokens[idx];
}

// Inverse of compass16: the bin-center angle of a 16-wind token, or -1.
inline double compass16_angle(const std::string& token) {
    static const char* tokens[16] = {"N",  "NNE", "NE", "ENE", "E",  "ESE",
                                     "SE", "SSE", "S",  "SSW", "SW", "WSW",
                                     "W",  "WNW", "NW", "NNW"};
    for (int i = 0; i < 16; ++i)
        if (token == tokens[i]) return i * 22.5;
    return -1.0;
}

// Absolute angular difference between two compass angles, in [0, 180].
inline double compass_diff_deg(double a, double b) {
    double d = std::fmod(std::fabs(a - b), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

struct Aabb {
    Vec2 min;
    Vec2 max;

    bool contains(const Vec2& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y;
    }
};

// Axis-aligned footprint of an object: center plus half-extents.
inline Aabb footprint(const Vec2& center, double half_x, double half_y) {
    return {{center.x - half_x, center.y - half_y},
            {center.x + half_x, center.y + half_y}};
}

// Segment/AABB intersection via the slab method.
inline bool segment_intersects_aabb(const Vec2& a, const Vec2& b, const Aabb& box) {
    double t0 = 0.0, t1 = 1.0;
    const double d[2] = {b.x - a.x, b.y - a.y};
    const double lo[2] = {box.min.x, box.min.y};
    const double hi[2] = {box.max.x, box.max.y};
    const double p[2] = {a.x, a.y};
    for (int i = 0; i < 2; ++i) {
        if (std::fabs(d[i]) < 1e-12) {
            if (p[i] < lo[i] || p[i] > hi[i]) return false;
        } else {
            double ta = (lo[i] - p[i]) / d[i];
            double tb = (hi[i] - p[i]) / d[i];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
            if (t0 > t1) return false;
        }
    }
    return true;
}

inline double polyline_length(const std::vector<Vec2>& pts) {
    double len = 0.0;
    for (size_t i = 1; i < pts.size(); ++i) len += (pts[i] - pts[i - 1]).norm();
    return len;
}

// Arc-length position of the projection of p onto the polyline.
inline double project_arclength(const std::vector<Vec2>& pts, const Vec2& p) {
    double best_d2 = std::numeric_limits<double>::max();
    double best_s = 0.0;
    double s = 0.0;
    for (size_t i = 1; i < pts.size(); ++i) {
        Vec2 a = pts[i - 1], b = pts[i];
        Vec2 ab = b - a;
        double len2 = ab.dot(ab);
        double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        Vec2 q = a + ab * t;
        double d2 = (p - q).dot(p - q);
        if (d2 < best_d2) {
            best_d2 = d2;
            best_s = s + std::sqrt(len2) * t;
        }
        s += std::sqrt(len2);
    }
    return best_s;
}

// Perpendicular distance from p to the polyline.
inline double distance_to_polyline(const std::vector<Vec2>& pts, const Vec2& p) {
    double best = std::numeric_limits<double>::max();
    for (size_t i = 1; i < pts.size(); ++i) {
        Vec2 a = pts[i - 1], b = pts[i];
        Vec2 ab = b - a;
        double len2 = ab.dot(ab);
        double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        Vec2 q = a + ab * t;
        best = std::min(best, (p - q).norm());
    }
    if (pts.size() == 1) best = (p - pts[0]).norm();
    return best;
}

}  // namespace uncap
