/**
 * Coordinate mapping between the displayed overlay and the content image.
 *
 * The overlay canvas is CSS-scaled over the preview image, so pointer
 * positions arrive in display pixels while the optimizer works in image
 * (canvas) pixels, row-major [y, x]. Both directions stay in floats; the
 * round trip is exact up to floating point.
 */

export interface ViewMapping {
  displayWidth: number;
  displayHeight: number;
  imageWidth: number;
  imageHeight: number;
}

export interface Point {
  x: number;
  y: number;
}

/** [y, x] pair in image coordinates, the wire format for paths. */
export type ImagePoint = [number, number];

export function displayToImage(p: Point, view: ViewMapping): ImagePoint {
  const sy = view.imageHeight / view.displayHeight;
  const sx = view.imageWidth / view.displayWidth;
  return [p.y * sy, p.x * sx];
}

export function imageToDisplay(p: ImagePoint, view: ViewMapping): Point {
  const sy = view.displayHeight / view.imageHeight;
  const sx = view.displayWidth / view.imageWidth;
  return { x: p[1] * sx, y: p[0] * sy };
}

/** Largest image-pixel error a display->image->display round trip can add. */
export function roundTripError(p: Point, view: ViewMapping): number {
  const back = imageToDisplay(displayToImage(p, view), view);
  const img = displayToImage(p, view);
  const imgBack = displayToImage(back, view);
  return Math.hypot(img[0] - imgBack[0], img[1] - imgBack[1]);
}
