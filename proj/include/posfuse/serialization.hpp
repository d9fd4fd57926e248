// JSON encoding of max-mixtures: one flat record per component with the
// linear weight, mean entries, row-major covariance entries and tag list.
#pragma once

#include "posfuse/possibility.hpp"

#include <json.hpp>

#include <cmath>
#include <string>

namespace posfuse {

inline void to_json(nlohmann::json& j, const ObservationId& id)
{
    j = nlohmann::json::array({id.sensor, id.time, id.index});
}

inline void from_json(const nlohmann::json& j, ObservationId& id)
{
    if (!j.is_array() || j.size() != 3) throw InvalidParameter("tag must be [sensor, time, index]");
    id.sensor = j.at(0).get<std::uint32_t>();
    id.time = j.at(1).get<std::uint32_t>();
    id.index = j.at(2).get<std::uint32_t>();
}

inline nlohmann::json vector_to_json(const Vector& v)
{
    auto arr = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline nlohmann::json matrix_to_json(const Matrix& m)
{
    auto arr = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
    return arr;
}

inline Vector vector_from_json(const nlohmann::json& j, int dim)
{
    if (!j.is_array() || static_cast<int>(j.size()) != dim) throw InvalidParameter("vector entry has wrong length");
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v(i) = j.at(i).get<double>();
    return v;
}

inline Matrix matrix_from_json(const nlohmann::json& j, int rows, int cols)
{
    if (!j.is_array() || static_cast<int>(j.size()) != rows * cols)
        throw InvalidParameter("matrix entry has wrong length");
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = j.at(r * cols + c).get<double>();
    return m;
}

inline void to_json(nlohmann::json& j, const GaussianComponent& c)
{
    j = nlohmann::json{{"weight", c.weight()},
                       {"mean", vector_to_json(c.mean)},
                       {"cov", matrix_to_json(c.cov)},
                       {"tags", c.tags}};
}

inline void to_json(nlohmann::json& j, const MaxMixture& f)
{
    j = nlohmann::json{{"format", "posfuse-maxmixture-v1"}, {"dim", f.dim}, {"components", f.components}};
}

inline MaxMixture mixture_from_json(const nlohmann::json& j)
{
    const int dim = j.at("dim").get<int>();
    MaxMixture f(dim);
    for (const auto& rec : j.at("components")) {
        GaussianComponent c;
        const double w = rec.at("weight").get<double>();
        if (!(w > 0.0 && w <= 1.0)) throw InvalidParameter("serialised weight outside (0, 1]");
        c.log_weight = std::log(w);
        c.mean = vector_from_json(rec.at("mean"), dim);
        c.cov = matrix_from_json(rec.at("cov"), dim, dim);
        checked_llt(c.cov, "mixture_from_json");
        c.tags = rec.at("tags").get<TagSet>();
        std::sort(c.tags.begin(), c.tags.end());
        c.tags.erase(std::unique(c.tags.begin(), c.tags.end()), c.tags.end());
        f.add(std::move(c));
    }
    return f;
}

inline void from_json(const nlohmann::json& j, MaxMixture& f) { f = mixture_from_json(j); }

/// Size in bytes of the compact JSON encoding; used as the message size of a
/// mixture sent over the network.
inline std::size_t serialized_size(const MaxMixture& f)
{
    return nlohmann::json(f).dump().size();
}

}  // namespace posfuse
