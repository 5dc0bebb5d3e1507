#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "spaars/error.hpp"

namespace spaars::io {

// Little binary framing used by every checkpoint format. Values are written in
// host byte order; doubles are copied bit-for-bit so round trips are exact.
class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
    }

    void put_string(const std::string& s) {
        put<std::uint64_t>(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    void put_matrix(const Eigen::MatrixXd& m) {
        put<std::int64_t>(m.rows());
        put<std::int64_t>(m.cols());
        out_.write(reinterpret_cast<const char*>(m.data()),
                   static_cast<std::streamsize>(m.size() * sizeof(double)));
    }

    void put_vector(const Eigen::VectorXd& v) {
        put<std::int64_t>(v.size());
        out_.write(reinterpret_cast<const char*>(v.data()),
                   static_cast<std::streamsize>(v.size() * sizeof(double)));
    }

    void put_rng(const std::mt19937_64& rng) {
        std::ostringstream os;
        os << rng;
        put_string(os.str());
    }

    void put_magic(const char (&tag)[5], std::uint32_t version) {
        out_.write(tag, 4);
        put<std::uint32_t>(version);
    }

    bool good() const { return out_.good(); }

private:
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        T value{};
        in_.read(reinterpret_cast<char*>(&value), sizeof(T));
        check();
        return value;
    }

    std::string get_string() {
        const auto n = get<std::uint64_t>();
        if (n > (1ULL << 32)) throw ConfigError("corrupt checkpoint: string length");
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        check();
        return s;
    }

    Eigen::MatrixXd get_matrix() {
        const auto rows = get<std::int64_t>();
        const auto cols = get<std::int64_t>();
        if (rows < 0 || cols < 0 || rows * cols > (1LL << 31))
            throw ConfigError("corrupt checkpoint: matrix shape");
        Eigen::MatrixXd m(rows, cols);
        in_.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(m.size() * sizeof(double)));
        check();
        return m;
    }

    Eigen::VectorXd get_vector() {
        const auto n = get<std::int64_t>();
        if (n < 0 || n > (1LL << 31)) throw ConfigError("corrupt checkpoint: vector length");
        Eigen::VectorXd v(n);
        in_.read(reinterpret_cast<char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
        check();
        return v;
    }

    void get_rng(std::mt19937_64& rng) {
        std::istringstream is(get_string());
        is >> rng;
        if (!is) throw ConfigError("corrupt checkpoint: rng state");
    }

    std::uint32_t expect_magic(const char (&tag)[5]) {
        char buf[4];
        in_.read(buf, 4);
        check();
        if (std::string(buf, 4) != std::string(tag, 4))
            throw ConfigError(std::string("bad checkpoint magic, expected ") + tag);
        return get<std::uint32_t>();
    }

private:
    void check() const {
        if (!in_) throw ConfigError("truncated checkpoint stream");
    }

    std::istream& in_;
};

}  // namespace spaars::io
