#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

#include "tdsa/chain.hpp"

namespace tdsa {

class FeatureError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Linear feature map: row s of Phi is phi(s). Columns must be independent and
/// every row must satisfy ||phi(s)||^2 <= 1.
class FeatureMatrix {
public:
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    explicit FeatureMatrix(const Matrix& phi) : phi_(phi) {
        if (phi_.rows() == 0 || phi_.cols() == 0) throw FeatureError("feature matrix must be non-empty");
        if (phi_.cols() > phi_.rows())
            throw FeatureError("more features than states; columns cannot be independent");
        if (!phi_.allFinite()) throw FeatureError("feature matrix has non-finite entries");
        for (Eigen::Index s = 0; s < phi_.rows(); ++s) {
            const double sq = phi_.row(s).squaredNorm();
            if (sq > 1.0 + 1e-12) {
                std::ostringstream os;
                os << "feature row " << s << " has squared norm " << sq << " > 1";
                throw FeatureError(os.str());
            }
        }
        Eigen::JacobiSVD<Matrix> svd(phi_);
        min_singular_ = svd.singularValues()(svd.singularValues().size() - 1);
        if (!(min_singular_ > 1e-10)) throw FeatureError("feature columns are linearly dependent");
        rows_ = phi_;
    }

    /// Phi = I_n (requires n features; rows have unit norm).
    static FeatureMatrix tabular(std::size_t n) {
        return FeatureMatrix(Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
    }

    [[nodiscard]] const Matrix& matrix() const noexcept { return phi_; }
    [[nodiscard]] std::size_t states() const noexcept { return static_cast<std::size_t>(phi_.rows()); }
    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(phi_.cols()); }
    [[nodiscard]] double min_singular_value() const noexcept { return min_singular_; }

    [[nodiscard]] auto row(std::size_t s) const { return rows_.row(static_cast<Eigen::Index>(s)); }

private:
    Matrix phi_;
    RowMajor rows_;
    double min_singular_ = 0.0;
};

/// Sampled TD(0) direction g(theta; X) = (r + gamma <phi(s'),theta> - <phi(s),theta>) phi(s).
inline void td0_direction(const FeatureMatrix& features, double gamma, const Vector& theta,
                          const Transition& x, Vector& out) {
    const auto phi_s = features.row(x.s);
    const double td_error = x.reward + gamma * features.row(x.next).dot(theta.transpose()) -
                            phi_s.dot(theta.transpose());
    out = td_error * phi_s.transpose();
}

inline Vector td0_direction(const FeatureMatrix& features, double gamma, const Vector& theta,
                            const Transition& x) {
    Vector out(theta.size());
    td0_direction(features, gamma, theta, x, out);
    return out;
}

}  // namespace tdsa
