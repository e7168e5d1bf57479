use crate::error::{Error, Result};

/// One quantized video frame, channel-major `[channels, height, width]`.
///
/// Intensities are stored as `u8`, so every value is in `[0, 255]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "frame {channels}x{height}x{width} needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn blank(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, values: vec![0; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> u8 {
        self.values[(c * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: u8) {
        self.values[(c * self.height + row) * self.width + col] = v;
    }
}

/// Ordered frames sharing one geometry.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sequence {
    frames: Vec<Frame>,
}

impl Sequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let dims = frames[0].dims();
        if let Some(bad) = frames.iter().position(|f| f.dims() != dims) {
            return Err(Error::Shape(format!(
                "frame {bad} has dims {:?}, frame 0 has {dims:?}",
                frames[bad].dims()
            )));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Frame] {
        &mut self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last(&self) -> &Frame {
        self.frames.last().expect("sequence is non-empty")
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.frames[0].dims()
    }
}
