package com.mix.app;

import java.security.KeyPairGenerator;
import java.security.MessageDigest;
import java.security.Signature;
import javax.crypto.Cipher;

public class Sig {
    public void f() throws Exception {
        Signature s = Signature.getInstance("SHA256withECDSA");
        Cipher c = Cipher.getInstance("AES");
        MessageDigest w = MessageDigest.getInstance("WHIRLPOOL");
        KeyPairGenerator g = KeyPairGenerator.getInstance("RSA");
    }
}
