#include "lacgan/image_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lacgan/errors.hpp"

namespace lacgan {

Image read_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorKind::Data, "cannot read image '" + path + "'");
  Image image(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(y, x, c) = static_cast<float>(row[x][2 - c]) / 127.5f - 1.0f;
      }
    }
  }
  return image;
}

void write_image(const std::string& path, const Image& image) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        float p = (image.at(y, x, c) + 1.0f) * 127.5f;
        p = p < 0.0f ? 0.0f : (p > 255.0f ? 255.0f : p);
        row[x][2 - c] = static_cast<unsigned char>(static_cast<int>(p + 0.5f));
      }
    }
  }
  if (!cv::imwrite(path, bgr)) fail(ErrorKind::Io, "cannot write image '" + path + "'");
}

void write_attention(const std::string& path, const AttentionMap& attention) {
  cv::Mat gray(attention.height(), attention.width(), CV_8UC1);
  for (int y = 0; y < attention.height(); ++y) {
    for (int x = 0; x < attention.width(); ++x) {
      gray.at<unsigned char>(y, x) =
          static_cast<unsigned char>(static_cast<int>(attention.at(y, x) * 255.0f + 0.5f));
    }
  }
  if (!cv::imwrite(path, gray)) fail(ErrorKind::Io, "cannot write image '" + path + "'");
}

LandmarkSet read_landmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot open landmark file '" + path + "'");
  std::vector<Point> points;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    Point p;
    bool ok = comma != std::string::npos;
    if (ok) {
      auto rx = std::from_chars(line.data(), line.data() + comma, p.x);
      auto ry = std::from_chars(line.data() + comma + 1, line.data() + line.size(), p.y);
      ok = rx.ec == std::errc() && ry.ec == std::errc() && rx.ptr == line.data() + comma &&
           ry.ptr == line.data() + line.size();
    }
    if (!ok) {
      fail(ErrorKind::Data, path + ":" + std::to_string(line_no) + ": expected 'x,y'");
    }
    points.push_back(p);
  }
  return LandmarkSet(std::move(points));
}

void write_landmarks(const std::string& path, const LandmarkSet& landmarks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write landmark file '" + path + "'");
  char buf[64];
  for (const auto& p : landmarks.points()) {
    auto rx = std::to_chars(buf, buf + sizeof(buf), p.x);
    out.write(buf, rx.ptr - buf);
    out.put(',');
    auto ry = std::to_chars(buf, buf + sizeof(buf), p.y);
    out.write(buf, ry.ptr - buf);
    out.put('\n');
  }
}

}  // namespace lacgan
